#pragma once

#include <torch/torch.h>

#include <vector>

namespace glcf {

// Exact Mann-Whitney estimate of the area under the ROC curve; tied
// positive/negative pairs count one half. Needs at least one sample of each
// class (ContractError otherwise).
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// AUROC over every pixel of every map. maps and masks are N x H x W (or H x W);
// mask pixels > 0 are anomalous.
double pixel_auroc(const torch::Tensor& maps, const torch::Tensor& masks);

struct SproOptions {
  double saturation_fraction = 1.0;
  double fpr_limit = 0.05;
};

// Saturated per-region overlap integrated over the false-positive rate.
//
// Regions are the 8-connected components of each mask. For every threshold t
// (each distinct map value, descending) a pixel is detected when its score is
// >= t; a region's overlap is min(1, |R & D| / (saturation_fraction * |R|)),
// sPRO(t) is the mean over all regions and FPR(t) the detected fraction of
// mask-negative pixels. The curve starts at (0, 0); its trapezoidal area up to
// fpr_limit (interpolated at the limit) is divided by fpr_limit. A constant map
// therefore scores fpr_limit / 2.
double spro(const torch::Tensor& maps, const torch::Tensor& masks, const SproOptions& opt = {});

// Connected components (8-neighbourhood) of one binary H x W mask; returns
// labels 0 (background) .. count, and writes count.
torch::Tensor label_regions(const torch::Tensor& mask, int64_t* count);

}  // namespace glcf
