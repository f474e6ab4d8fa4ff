#include "kpc/condense.hpp"

#include <cmath>

#include "kpc/errors.hpp"

namespace kpc {

std::size_t HeadConfig::kept_channels() const {
  const double kept = static_cast<double>(channels) * channel_keep;
  const double rounded = std::round(kept);
  if (rounded < 1.0 || std::abs(kept - rounded) > 1e-9) {
    throw ConfigError("head: channels * channel_keep = " + std::to_string(kept) + " is not a positive integer");
  }
  return static_cast<std::size_t>(rounded);
}

void HeadConfig::validate() const {
  if (channels == 0 || height == 0 || width == 0) throw ConfigError("head: C, H and W must be positive");
  if (num_parts < 1 || num_parts > height * width) throw ConfigError("head: K must lie in [1, H*W]");
  if (sub_len < 1 || sub_len > std::min(height, width)) throw ConfigError("head: L must lie in [1, min(H, W)]");
  if (hidden < 1) throw ConfigError("head: hidden width must be positive");
  if (num_classes < 1) throw ConfigError("head: need at least one foreground class");
  (void)kept_channels();
}

namespace {

void fill_uniform(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data()) v = dist(rng);
}

}  // namespace

HeadParams HeadParams::zeros(const HeadConfig& cfg) {
  cfg.validate();
  HeadParams p;
  p.global_w = Tensor(Shape{cfg.kept_channels(), cfg.channels, 1, 1});
  p.global_b = Tensor(Shape{cfg.kept_channels()});
  p.fc_w = Tensor(Shape{cfg.hidden, cfg.descriptor_len()});
  p.fc_b = Tensor(Shape{cfg.hidden});
  p.cls_w = Tensor(Shape{cfg.cls_outputs(), cfg.hidden});
  p.cls_b = Tensor(Shape{cfg.cls_outputs()});
  p.reg_w = Tensor(Shape{cfg.reg_outputs(), cfg.hidden});
  p.reg_b = Tensor(Shape{cfg.reg_outputs()});
  return p;
}

HeadParams HeadParams::init(const HeadConfig& cfg, std::mt19937_64& rng) {
  HeadParams p = zeros(cfg);
  fill_uniform(p.global_w, cfg.channels, rng);
  fill_uniform(p.fc_w, cfg.descriptor_len(), rng);
  fill_uniform(p.cls_w, cfg.hidden, rng);
  fill_uniform(p.reg_w, cfg.hidden, rng);
  return p;
}

void HeadParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("head.global.weight", global_w);
  fn("head.global.bias", global_b);
  fn("head.fc.weight", fc_w);
  fn("head.fc.bias", fc_b);
  fn("head.cls.weight", cls_w);
  fn("head.cls.bias", cls_b);
  fn("head.reg.weight", reg_w);
  fn("head.reg.bias", reg_b);
}

HeadOutput to_output(const HeadOutputVars& vars) {
  const auto c = vars.cls.value().data();
  const auto r = vars.reg.value().data();
  return HeadOutput{{c.begin(), c.end()}, {r.begin(), r.end()}};
}

Var key_part_modeling(Var x, Var maps, const KeyPartSet& parts) {
  const Shape& xs = x.shape();
  const Shape& ms = maps.shape();
  if (xs.size() != 3 || ms.size() != 3) throw ContractError("key_part_modeling: x and maps must be rank 3");
  if (ms[1] != xs[1] || ms[2] != xs[2]) {
    throw ContractError("key_part_modeling: maps " + shape_str(ms) + " and features " + shape_str(xs) +
                        " differ spatially");
  }
  if (parts.points.size() != ms[0]) throw ContractError("key_part_modeling: one key part per map required");
  return concat({flatten(gather_at(x, parts.points)), flatten(maps)});
}

Var global_activations(Var x, HeadParams& params, const HeadConfig& cfg) {
  Graph& g = *x.graph;
  Var pooled = adaptive_avg_pool(x, cfg.sub_len);
  return conv2d(pooled, g.parameter(params.global_w), g.parameter(params.global_b), Conv2dOptions{});
}

Var global_modeling(Var x, HeadParams& params, const HeadConfig& cfg) {
  return flatten(global_activations(x, params, cfg));
}

HeadOutputVars head_forward(Var z_k, Var z_g, HeadParams& params, const HeadConfig& cfg) {
  if (z_k.size() + z_g.size() != cfg.descriptor_len()) {
    throw ContractError("head_forward: descriptor length " + std::to_string(z_k.size() + z_g.size()) +
                        " != expected " + std::to_string(cfg.descriptor_len()));
  }
  Graph& g = *z_k.graph;
  Var hidden = relu(linear(concat({z_k, z_g}), g.parameter(params.fc_w), g.parameter(params.fc_b)));
  return HeadOutputVars{linear(hidden, g.parameter(params.cls_w), g.parameter(params.cls_b)),
                        linear(hidden, g.parameter(params.reg_w), g.parameter(params.reg_b))};
}

void check_compatible(const OkpdConfig& okpd_cfg, const HeadConfig& head_cfg) {
  okpd_cfg.validate();
  head_cfg.validate();
  if (okpd_cfg.channels != head_cfg.channels) throw ConfigError("okpd and head configs disagree on channels");
  if (okpd_cfg.num_parts != head_cfg.num_parts) throw ConfigError("okpd and head configs disagree on K");
}

CondensedModel CondensedModel::init(const OkpdConfig& okpd_cfg, const HeadConfig& head_cfg, std::uint64_t seed) {
  check_compatible(okpd_cfg, head_cfg);
  std::mt19937_64 rng(seed);
  CondensedModel m{okpd_cfg, head_cfg, OkpdParams::init(okpd_cfg, rng), HeadParams{}, false};
  m.head = HeadParams::init(head_cfg, rng);
  return m;
}

void CondensedModel::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  okpd.for_each(fn);
  head.for_each(fn);
}

std::size_t CondensedModel::scalar_count() {
  std::size_t n = 0;
  for_each([&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

CondensedForward full_condensed_forward(Var x, CondensedModel& model) {
  check_compatible(model.okpd_cfg, model.head_cfg);
  const Shape& xs = x.shape();
  if (xs.size() != 3 || xs[0] != model.head_cfg.channels || xs[1] != model.head_cfg.height ||
      xs[2] != model.head_cfg.width) {
    throw ConfigError("condensed forward: input " + shape_str(xs) + " does not match head config");
  }
  CondensedForward f;
  Var refined = concentration_forward(x, model.okpd, model.okpd_cfg);
  f.raw_maps = predict_confidence(refined, model.okpd, model.okpd_cfg);
  f.maps = tmr_squash(f.raw_maps, model.okpd_cfg.alpha, model.okpd_cfg.epsilon);
  f.parts = extract_key_parts(f.maps.value());
  f.z_k = key_part_modeling(model.gather_refined ? refined : x, f.maps, f.parts);
  f.z_g = global_modeling(x, model.head, model.head_cfg);
  f.out = head_forward(f.z_k, f.z_g, model.head, model.head_cfg);
  return f;
}

void BaselineConfig::validate() const {
  if (channels == 0 || height == 0 || width == 0 || hidden == 0 || num_classes == 0) {
    throw ConfigError("baseline: all extents must be positive");
  }
}

BaselineModel BaselineModel::init(const BaselineConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  BaselineModel m;
  m.cfg = cfg;
  m.fc1_w = Tensor(Shape{cfg.hidden, cfg.input_len()});
  m.fc1_b = Tensor(Shape{cfg.hidden});
  m.fc2_w = Tensor(Shape{cfg.hidden, cfg.hidden});
  m.fc2_b = Tensor(Shape{cfg.hidden});
  m.cls_w = Tensor(Shape{cfg.num_classes + 1, cfg.hidden});
  m.cls_b = Tensor(Shape{cfg.num_classes + 1});
  m.reg_w = Tensor(Shape{cfg.reg_outputs(), cfg.hidden});
  m.reg_b = Tensor(Shape{cfg.reg_outputs()});
  fill_uniform(m.fc1_w, cfg.input_len(), rng);
  fill_uniform(m.fc2_w, cfg.hidden, rng);
  fill_uniform(m.cls_w, cfg.hidden, rng);
  fill_uniform(m.reg_w, cfg.hidden, rng);
  return m;
}

void BaselineModel::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("baseline.fc1.weight", fc1_w);
  fn("baseline.fc1.bias", fc1_b);
  fn("baseline.fc2.weight", fc2_w);
  fn("baseline.fc2.bias", fc2_b);
  fn("baseline.cls.weight", cls_w);
  fn("baseline.cls.bias", cls_b);
  fn("baseline.reg.weight", reg_w);
  fn("baseline.reg.bias", reg_b);
}

std::size_t BaselineModel::scalar_count() {
  std::size_t n = 0;
  for_each([&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

HeadOutputVars baseline_forward(Var x, BaselineModel& model) {
  if (x.size() != model.cfg.input_len()) {
    throw ContractError("baseline forward: input length " + std::to_string(x.size()) + " != " +
                        std::to_string(model.cfg.input_len()));
  }
  Graph& g = *x.graph;
  Var h1 = relu(linear(x, g.parameter(model.fc1_w), g.parameter(model.fc1_b)));
  Var h2 = relu(linear(h1, g.parameter(model.fc2_w), g.parameter(model.fc2_b)));
  return HeadOutputVars{linear(h2, g.parameter(model.cls_w), g.parameter(model.cls_b)),
                        linear(h2, g.parameter(model.reg_w), g.parameter(model.reg_b))};
}

}  // namespace kpc
