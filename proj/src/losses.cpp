#include "kpc/losses.hpp"

#include <cmath>
#include <string>

#include "kpc/errors.hpp"

namespace kpc {

double smooth_l1(double a, double b) {
  const double d = a - b;
  const double ad = std::abs(d);
  return ad < 1.0 ? 0.5 * d * d : ad - 0.5;
}

double smooth_l1_grad(double a, double b) {
  const double d = a - b;
  if (d >= 1.0) return 1.0;
  if (d <= -1.0) return -1.0;
  return d;
}

Var smooth_l1_sum(Var values, std::vector<double> targets, std::vector<double> weights) {
  const Tensor& v = values.value();
  if (targets.size() != v.size() || weights.size() != v.size()) {
    throw ContractError("smooth_l1_sum: " + std::to_string(v.size()) + " values but " +
                        std::to_string(targets.size()) + " targets / " + std::to_string(weights.size()) + " weights");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += weights[i] * smooth_l1(v[i], targets[i]);
  return values.graph->record(Tensor::scalar(acc), {values}, [=](Graph& gr, std::span<const double> go) {
    const auto vv = gr.value(values).data();
    auto gv = gr.grad_buffer(values);
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += go[0] * weights[i] * smooth_l1_grad(vv[i], targets[i]);
  });
}

Var map_peaks(Var maps) {
  const Tensor& m = maps.value();
  if (m.rank() != 3) throw ContractError("map_peaks: maps must be K x H x W, got " + shape_str(m.shape()));
  const std::size_t k = m.dim(0), h = m.dim(1), w = m.dim(2);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < k; ++i) {
    const auto am = argmax2d(m.data().subspan(i * h * w, h * w), h, w);
    idx.push_back(i * h * w + am.row * w + am.col);
  }
  return select(maps, std::move(idx));
}

Var summed_peak(Var maps) {
  Var summed = sum_leading(maps);
  const Tensor& s = summed.value();
  const auto am = argmax2d(s);
  return select(summed, {am.row * s.dim(1) + am.col});
}

namespace {

void check_batch(std::span<const Var> maps_batch, std::span<const int> labels) {
  if (maps_batch.empty()) throw ContractError("okpd loss: empty batch");
  if (maps_batch.size() != labels.size()) {
    throw ContractError("okpd loss: " + std::to_string(maps_batch.size()) + " map sets but " +
                        std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw ContractError("okpd loss: labels must be 0 or 1");
  }
}

Var sum_scalars(const std::vector<Var>& terms) {
  return sum(concat(terms));
}

}  // namespace

Var discriminative_loss(std::span<const Var> maps_batch, std::span<const int> labels) {
  check_batch(maps_batch, labels);
  std::vector<Var> terms;
  for (std::size_t i = 0; i < maps_batch.size(); ++i) {
    Var peaks = map_peaks(maps_batch[i]);
    terms.push_back(smooth_l1_sum(peaks, std::vector<double>(peaks.size(), static_cast<double>(labels[i])),
                                  std::vector<double>(peaks.size(), 1.0)));
  }
  return sum_scalars(terms);
}

Var uniqueness_loss(std::span<const Var> maps_batch, std::span<const int> labels) {
  check_batch(maps_batch, labels);
  std::vector<Var> terms;
  for (std::size_t i = 0; i < maps_batch.size(); ++i) {
    terms.push_back(smooth_l1_sum(summed_peak(maps_batch[i]), {1.0}, {static_cast<double>(labels[i])}));
  }
  return sum_scalars(terms);
}

Var okpd_objective(std::span<const Var> maps_batch, std::span<const int> labels) {
  return add(discriminative_loss(maps_batch, labels), uniqueness_loss(maps_batch, labels));
}

Var cross_entropy(Var logits, std::size_t target) {
  const Tensor& z = logits.value();
  if (target >= z.size()) {
    throw ContractError("cross_entropy: class " + std::to_string(target) + " outside [0, " +
                        std::to_string(z.size()) + ")");
  }
  double mx = z[0];
  for (double v : z.data()) mx = std::max(mx, v);
  double denom = 0.0;
  for (double v : z.data()) denom += std::exp(v - mx);
  const double lse = mx + std::log(denom);
  return logits.graph->record(Tensor::scalar(lse - z[target]), {logits},
                              [=](Graph& gr, std::span<const double> go) {
                                const auto zv = gr.value(logits).data();
                                auto gz = gr.grad_buffer(logits);
                                for (std::size_t i = 0; i < gz.size(); ++i) {
                                  const double p = std::exp(zv[i] - lse);
                                  gz[i] += go[0] * (p - (i == target ? 1.0 : 0.0));
                                }
                              });
}

Var toy_detection_loss(Var cls, Var reg, std::size_t target_class, const std::array<double, 4>& box_target,
                       bool reg_per_class) {
  const std::size_t num_classes = cls.size() - 1;
  if (target_class > num_classes) {
    throw ContractError("toy_detection_loss: class " + std::to_string(target_class) + " outside [0, " +
                        std::to_string(num_classes) + "]");
  }
  Var ce = cross_entropy(cls, target_class);
  if (target_class == 0) return ce;
  const std::size_t base = reg_per_class ? 4 * (target_class - 1) : 0;
  if (base + 4 > reg.size()) throw ContractError("toy_detection_loss: regressor too narrow for target class");
  Var box = select(reg, {base, base + 1, base + 2, base + 3});
  return add(ce, smooth_l1_sum(box, {box_target.begin(), box_target.end()}, {1.0, 1.0, 1.0, 1.0}));
}

}  // namespace kpc
