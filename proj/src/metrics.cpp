#include "glcf/metrics.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <numeric>

#include "glcf/errors.hpp"

namespace glcf {

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ContractError("auroc: scores and labels differ in length");
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Sum of average ranks of the positives.
  double rank_sum = 0.0;
  size_t pos = 0;
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0) {
        rank_sum += avg_rank;
        ++pos;
      }
    }
    i = j;
  }
  const size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw ContractError("auroc needs at least one positive and one negative sample");
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1) / 2.0) / (p * q);
}

double pixel_auroc(const torch::Tensor& maps, const torch::Tensor& masks) {
  if (maps.sizes() != masks.sizes()) throw ContractError("pixel_auroc: map and mask shapes differ");
  auto s = maps.detach().to(torch::kDouble).contiguous().flatten();
  auto m = (masks.detach() > 0).to(torch::kInt).contiguous().flatten();
  std::vector<double> scores(s.data_ptr<double>(), s.data_ptr<double>() + s.numel());
  std::vector<int> labels(m.data_ptr<int>(), m.data_ptr<int>() + m.numel());
  return auroc(scores, labels);
}

torch::Tensor label_regions(const torch::Tensor& mask, int64_t* count) {
  if (mask.dim() != 2) throw ContractError("label_regions expects an H x W mask");
  auto bin = (mask.detach() > 0).to(torch::kUInt8).contiguous();
  cv::Mat m(static_cast<int>(bin.size(0)), static_cast<int>(bin.size(1)), CV_8UC1, bin.data_ptr<uint8_t>());
  cv::Mat labels;
  const int n = cv::connectedComponents(m, labels, 8, CV_32S);
  if (count) *count = n - 1;
  return torch::from_blob(labels.data, {labels.rows, labels.cols}, torch::kInt).clone().to(torch::kLong);
}

double spro(const torch::Tensor& maps_in, const torch::Tensor& masks_in, const SproOptions& opt) {
  if (maps_in.sizes() != masks_in.sizes()) throw ContractError("spro: map and mask shapes differ");
  if (!(opt.fpr_limit > 0.0 && opt.fpr_limit <= 1.0)) throw ConfigError("spro: fpr_limit must lie in (0, 1]");
  if (!(opt.saturation_fraction > 0.0 && opt.saturation_fraction <= 1.0)) {
    throw ConfigError("spro: saturation_fraction must lie in (0, 1]");
  }
  auto maps = maps_in.dim() == 2 ? maps_in.unsqueeze(0) : maps_in;
  auto masks = masks_in.dim() == 2 ? masks_in.unsqueeze(0) : masks_in;
  if (maps.dim() != 3) throw ContractError("spro expects H x W or N x H x W inputs");

  // Region id per pixel (-1 = normal), with globally unique ids across images.
  const int64_t per_image = maps.size(1) * maps.size(2);
  std::vector<int64_t> region(static_cast<size_t>(maps.size(0) * per_image), -1);
  std::vector<double> capacity;  // saturation_fraction * |R|
  for (int64_t b = 0; b < maps.size(0); ++b) {
    int64_t n = 0;
    auto lab = label_regions(masks[b], &n).flatten();
    auto acc = lab.accessor<int64_t, 1>();
    const auto base = static_cast<int64_t>(capacity.size());
    std::vector<int64_t> sizes(static_cast<size_t>(n), 0);
    for (int64_t i = 0; i < per_image; ++i) {
      if (acc[i] > 0) {
        region[static_cast<size_t>(b * per_image + i)] = base + acc[i] - 1;
        ++sizes[static_cast<size_t>(acc[i] - 1)];
      }
    }
    for (auto sz : sizes) capacity.push_back(opt.saturation_fraction * static_cast<double>(sz));
  }
  if (capacity.empty()) throw ContractError("spro: ground truth contains no anomalous region");

  auto flat = maps.detach().to(torch::kDouble).contiguous().flatten();
  const double* score = flat.data_ptr<double>();
  const size_t total = region.size();
  int64_t negatives = 0;
  for (auto r : region) negatives += r < 0;
  if (negatives == 0) throw ContractError("spro: no normal pixels to measure false positives on");

  std::vector<size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return score[a] > score[b]; });

  const double n_regions = static_cast<double>(capacity.size());
  std::vector<double> hit(capacity.size(), 0.0);
  double overlap_sum = 0.0;
  int64_t fp = 0;
  double prev_fpr = 0.0, prev_pro = 0.0, area = 0.0;
  for (size_t i = 0; i < total;) {
    size_t j = i;
    while (j < total && score[order[j]] == score[order[i]]) {
      const auto r = region[order[j]];
      if (r < 0) {
        ++fp;
      } else {
        const auto ri = static_cast<size_t>(r);
        const double before = std::min(1.0, hit[ri] / capacity[ri]);
        hit[ri] += 1.0;
        overlap_sum += std::min(1.0, hit[ri] / capacity[ri]) - before;
      }
      ++j;
    }
    i = j;
    const double fpr = static_cast<double>(fp) / static_cast<double>(negatives);
    const double pro = overlap_sum / n_regions;
    if (fpr >= opt.fpr_limit) {
      // Interpolate the segment at the limit.
      const double t = fpr > prev_fpr ? (opt.fpr_limit - prev_fpr) / (fpr - prev_fpr) : 0.0;
      const double pro_at = prev_pro + t * (pro - prev_pro);
      area += 0.5 * (opt.fpr_limit - prev_fpr) * (prev_pro + pro_at);
      return area / opt.fpr_limit;
    }
    area += 0.5 * (fpr - prev_fpr) * (prev_pro + pro);
    prev_fpr = fpr;
    prev_pro = pro;
  }
  return area / opt.fpr_limit;  // unreachable: the final threshold reaches FPR 1
}

}  // namespace glcf
