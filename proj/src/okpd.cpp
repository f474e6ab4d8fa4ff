#include "kpc/okpd.hpp"

#include <cmath>

#include "kpc/errors.hpp"

namespace kpc {

void OkpdConfig::validate() const {
  if (channels == 0 || num_parts == 0 || num_blocks == 0 || reduction == 0 || groups == 0 || dilation == 0) {
    throw ConfigError("okpd: channels, num_parts, num_blocks, reduction, groups and dilation must be positive");
  }
  if (channels % reduction != 0) throw ConfigError("okpd: reduction does not divide channels");
  if (channels % groups != 0) throw ConfigError("okpd: groups do not divide channels");
  if (reduced_channels() % groups != 0) throw ConfigError("okpd: groups do not divide channels / reduction");
  if (!(epsilon > 0.0)) throw ConfigError("okpd: epsilon must be positive");
  if (!(alpha >= 0.0)) throw ConfigError("okpd: alpha must be non-negative");
}

namespace {

void fill_uniform(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data()) v = dist(rng);
}

}  // namespace

OkpdParams OkpdParams::zeros(const OkpdConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels, r = cfg.reduced_channels();
  OkpdParams p;
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    p.blocks.push_back(ConcentrationBlock{Tensor(Shape{r, c / cfg.groups, 3, 3}), Tensor(Shape{r}),
                                          Tensor(Shape{c, r, 1, 1}), Tensor(Shape{c})});
  }
  p.predict_w = Tensor(Shape{cfg.num_parts, c, 1, 1});
  p.predict_b = Tensor(Shape{cfg.num_parts});
  return p;
}

OkpdParams OkpdParams::init(const OkpdConfig& cfg, std::mt19937_64& rng) {
  OkpdParams p = zeros(cfg);
  for (auto& blk : p.blocks) {
    fill_uniform(blk.reduce_w, 9 * (cfg.channels / cfg.groups), rng);
    fill_uniform(blk.restore_w, cfg.reduced_channels(), rng);
  }
  fill_uniform(p.predict_w, cfg.channels, rng);
  return p;
}

void OkpdParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string prefix = "okpd.block" + std::to_string(b) + ".";
    fn(prefix + "reduce.weight", blocks[b].reduce_w);
    fn(prefix + "reduce.bias", blocks[b].reduce_b);
    fn(prefix + "restore.weight", blocks[b].restore_w);
    fn(prefix + "restore.bias", blocks[b].restore_b);
  }
  fn("okpd.predict.weight", predict_w);
  fn("okpd.predict.bias", predict_b);
}

std::size_t OkpdParams::scalar_count() {
  std::size_t n = 0;
  for_each([&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

Var concentration_forward(Var x, OkpdParams& params, const OkpdConfig& cfg) {
  cfg.validate();
  if (x.shape().size() != 3 || x.shape()[0] != cfg.channels) {
    throw ConfigError("concentration: input " + shape_str(x.shape()) + " does not have " +
                      std::to_string(cfg.channels) + " channels");
  }
  if (params.blocks.size() != cfg.num_blocks) throw ConfigError("concentration: block count differs from config");
  Graph& g = *x.graph;
  Var h = x;
  for (auto& blk : params.blocks) {
    Var reduced = conv2d(h, g.parameter(blk.reduce_w), g.parameter(blk.reduce_b),
                         Conv2dOptions{cfg.groups, cfg.dilation, same_padding(3, cfg.dilation)});
    Var restored = conv2d(relu(reduced), g.parameter(blk.restore_w), g.parameter(blk.restore_b), Conv2dOptions{});
    h = add(h, restored);
  }
  return h;
}

Var predict_confidence(Var refined, OkpdParams& params, const OkpdConfig& cfg) {
  if (refined.shape().size() != 3 || refined.shape()[0] != cfg.channels) {
    throw ContractError("predict_confidence: input " + shape_str(refined.shape()) + " does not have " +
                        std::to_string(cfg.channels) + " channels");
  }
  Graph& g = *refined.graph;
  return conv2d(refined, g.parameter(params.predict_w), g.parameter(params.predict_b), Conv2dOptions{});
}

namespace {

struct MapLayout {
  std::size_t maps, height, width;
};

MapLayout map_layout(const Tensor& t) {
  if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  throw ContractError("confidence maps must be K x H x W, got " + shape_str(t.shape()));
}

}  // namespace

Tensor tmr_squash(const Tensor& raw, double alpha, double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("tmr_squash: epsilon must be positive");
  const auto [k, h, w] = map_layout(raw);
  const std::size_t area = h * w;
  Tensor out(raw.shape());
  for (std::size_t m = 0; m < k; ++m) {
    const auto map = raw.data().subspan(m * area, area);
    const double peak = argmax2d(map, h, w).value;
    const double denom = std::max(0.0, peak + alpha - 1.0) + 1.0 + epsilon;
    for (std::size_t i = 0; i < area; ++i) out[m * area + i] = std::max(0.0, (map[i] + alpha) / denom);
  }
  return out;
}

Var tmr_squash(Var raw, double alpha, double epsilon) {
  const Tensor& x = raw.value();
  Tensor out = tmr_squash(x, alpha, epsilon);
  const auto [k, h, w] = map_layout(x);
  return raw.graph->record(std::move(out), {raw}, [=](Graph& gr, std::span<const double> go) {
    const auto xv = gr.value(raw).data();
    auto gx = gr.grad_buffer(raw);
    const std::size_t area = h * w;
    for (std::size_t m = 0; m < k; ++m) {
      const std::size_t base = m * area;
      const auto am = argmax2d(xv.subspan(base, area), h, w);
      const std::size_t peak_idx = base + am.row * w + am.col;
      const bool truncated = am.value + alpha > 1.0;
      const double denom = (truncated ? am.value + alpha - 1.0 : 0.0) + 1.0 + epsilon;
      double peak_grad = 0.0;
      for (std::size_t i = 0; i < area; ++i) {
        const double num = xv[base + i] + alpha;
        if (num <= 0.0) continue;
        gx[base + i] += go[base + i] / denom;
        if (truncated) peak_grad -= go[base + i] * num / (denom * denom);
      }
      gx[peak_idx] += peak_grad;
    }
  });
}

KeyPartSet extract_key_parts(const Tensor& maps) {
  const auto [k, h, w] = map_layout(maps);
  KeyPartSet parts;
  parts.points.reserve(k);
  parts.confidences.reserve(k);
  for (std::size_t m = 0; m < k; ++m) {
    const auto am = argmax2d(maps.data().subspan(m * h * w, h * w), h, w);
    parts.points.push_back(GridPoint{am.row, am.col});
    parts.confidences.push_back(am.value);
  }
  return parts;
}

}  // namespace kpc
