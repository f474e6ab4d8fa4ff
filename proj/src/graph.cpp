#include "kpc/graph.hpp"

#include <algorithm>
#include <string>

#include "kpc/errors.hpp"

namespace kpc {

const Tensor& Var::value() const {
  if (!graph) throw ContractError("use of an unbound Var");
  return graph->value(*this);
}

std::span<const double> Var::grad() const {
  if (!graph) throw ContractError("use of an unbound Var");
  return graph->grad(*this);
}

Graph::Node& Graph::node(Var v) {
  if (v.graph != this || v.id >= nodes_.size()) throw ContractError("Var does not belong to this graph");
  return nodes_[v.id];
}

const Graph::Node& Graph::node(Var v) const {
  if (v.graph != this || v.id >= nodes_.size()) throw ContractError("Var does not belong to this graph");
  return nodes_[v.id];
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, {}, false});
  return Var{this, nodes_.size() - 1};
}

Var Graph::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, {}, true});
  return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(Tensor& param) {
  nodes_.push_back(Node{Tensor{}, &param, {}, {}, true});
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const auto& in : inputs) needs = needs || node(in).requires_grad;
  nodes_.push_back(Node{std::move(value), nullptr, {}, needs ? std::move(backward) : BackwardFn{}, needs});
  return Var{this, nodes_.size() - 1};
}

const Tensor& Graph::value(Var v) const {
  const Node& n = node(v);
  return n.param ? *n.param : n.value;
}

bool Graph::requires_grad(Var v) const { return node(v).requires_grad; }

std::span<double> Graph::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.param) return n.param->grad();
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

std::span<const double> Graph::grad(Var v) { return grad_buffer(v); }

void Graph::backward(Var loss) {
  if (backward_done_) throw StateError("backward already ran on this graph; record a new forward pass");
  if (value(loss).size() != 1) throw ContractError("backward needs a scalar loss, got " + shape_str(value(loss).shape()));
  backward_done_ = true;
  if (!node(loss).requires_grad) return;
  grad_buffer(loss)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

namespace {

Graph& same_graph(std::initializer_list<Var> vars) {
  Graph* g = nullptr;
  for (const auto& v : vars) {
    if (!v.graph) throw ContractError("use of an unbound Var");
    if (g && v.graph != g) throw ContractError("operands live on different graphs");
    g = v.graph;
  }
  return *g;
}

void add_into(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var conv2d(Var input, Var weight, Var bias, Conv2dOptions opts) {
  Graph& g = same_graph({input, weight, bias});
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  if (opts.groups == 0) throw ConfigError("conv2d: groups must be positive");
  if (opts.dilation == 0) throw ConfigError("conv2d: dilation must be positive");
  if (x.rank() != 3) throw ContractError("conv2d: input must be C x H x W, got " + shape_str(x.shape()));
  if (w.rank() != 4) throw ContractError("conv2d: weight must be rank 4, got " + shape_str(w.shape()));
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (cin % opts.groups != 0) throw ConfigError("conv2d: groups do not divide input channels");
  if (cout % opts.groups != 0) throw ConfigError("conv2d: groups do not divide output channels");
  const std::size_t cin_g = cin / opts.groups, cout_g = cout / opts.groups;
  if (w.dim(1) != cin_g) {
    throw ContractError("conv2d: weight axis 1 is " + std::to_string(w.dim(1)) + ", expected C_in/groups = " +
                        std::to_string(cin_g));
  }
  if (w.dim(3) != k) throw ContractError("conv2d: weight axis 3 differs from axis 2 (square kernels only)");
  if (k % 2 == 0) throw ContractError("conv2d: kernel size must be odd");
  if (b.size() != cout) throw ContractError("conv2d: bias axis 0 is " + std::to_string(b.size()) + ", expected " +
                                            std::to_string(cout));
  const long span = static_cast<long>(opts.dilation * (k - 1));
  const long pad = static_cast<long>(opts.padding);
  const long hout_l = static_cast<long>(h) + 2 * pad - span;
  const long wout_l = static_cast<long>(wd) + 2 * pad - span;
  if (hout_l <= 0 || wout_l <= 0) throw ContractError("conv2d: kernel extent exceeds padded input");
  const std::size_t hout = static_cast<std::size_t>(hout_l), wout = static_cast<std::size_t>(wout_l);
  const long dil = static_cast<long>(opts.dilation);

  Tensor out(Shape{cout, hout, wout});
  auto xd = x.data();
  auto wdat = w.data();
  auto od = out.data();
  for (std::size_t oc = 0; oc < cout; ++oc) {
    const std::size_t grp = oc / cout_g;
    for (std::size_t i = 0; i < hout * wout; ++i) od[oc * hout * wout + i] = b[oc];
    for (std::size_t icg = 0; icg < cin_g; ++icg) {
      const std::size_t ic = grp * cin_g + icg;
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double wv = wdat[((oc * cin_g + icg) * k + ky) * k + kx];
          for (std::size_t oy = 0; oy < hout; ++oy) {
            const long iy = static_cast<long>(oy) - pad + static_cast<long>(ky) * dil;
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t ox = 0; ox < wout; ++ox) {
              const long ix = static_cast<long>(ox) - pad + static_cast<long>(kx) * dil;
              if (ix < 0 || ix >= static_cast<long>(wd)) continue;
              od[(oc * hout + oy) * wout + ox] += wv * xd[(ic * h + static_cast<std::size_t>(iy)) * wd + ix];
            }
          }
        }
      }
    }
  }

  return g.record(std::move(out), {input, weight, bias}, [=](Graph& gr, std::span<const double> go) {
    const auto xv = gr.value(input).data();
    const auto wv = gr.value(weight).data();
    const bool want_x = gr.requires_grad(input), want_w = gr.requires_grad(weight), want_b = gr.requires_grad(bias);
    std::span<double> gx, gw, gb;
    if (want_x) gx = gr.grad_buffer(input);
    if (want_w) gw = gr.grad_buffer(weight);
    if (want_b) gb = gr.grad_buffer(bias);
    for (std::size_t oc = 0; oc < cout; ++oc) {
      const std::size_t grp = oc / cout_g;
      if (want_b) {
        for (std::size_t i = 0; i < hout * wout; ++i) gb[oc] += go[oc * hout * wout + i];
      }
      if (!want_x && !want_w) continue;
      for (std::size_t icg = 0; icg < cin_g; ++icg) {
        const std::size_t ic = grp * cin_g + icg;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::size_t widx = ((oc * cin_g + icg) * k + ky) * k + kx;
            double acc_w = 0.0;
            for (std::size_t oy = 0; oy < hout; ++oy) {
              const long iy = static_cast<long>(oy) - pad + static_cast<long>(ky) * dil;
              if (iy < 0 || iy >= static_cast<long>(h)) continue;
              for (std::size_t ox = 0; ox < wout; ++ox) {
                const long ix = static_cast<long>(ox) - pad + static_cast<long>(kx) * dil;
                if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                const std::size_t xi = (ic * h + static_cast<std::size_t>(iy)) * wd + ix;
                const double gv = go[(oc * hout + oy) * wout + ox];
                acc_w += gv * xv[xi];
                if (want_x) gx[xi] += gv * wv[widx];
              }
            }
            if (want_w) gw[widx] += acc_w;
          }
        }
      }
    }
  });
}

namespace {

struct Bin {
  std::size_t begin, end;
};

std::vector<Bin> pool_bins(std::size_t extent, std::size_t out_len) {
  std::vector<Bin> bins(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    bins[i].begin = (i * extent) / out_len;
    bins[i].end = ((i + 1) * extent + out_len - 1) / out_len;
  }
  return bins;
}

}  // namespace

Var adaptive_avg_pool(Var input, std::size_t out_len) {
  Graph& g = same_graph({input});
  const Tensor& x = input.value();
  if (x.rank() != 3) throw ContractError("adaptive_avg_pool: input must be C x H x W, got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (out_len < 1 || out_len > h || out_len > w) {
    throw ConfigError("adaptive_avg_pool: output length " + std::to_string(out_len) + " outside [1, min(H, W)]");
  }
  const auto rows = pool_bins(h, out_len);
  const auto cols = pool_bins(w, out_len);
  Tensor out(Shape{c, out_len, out_len});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < out_len; ++i) {
      for (std::size_t j = 0; j < out_len; ++j) {
        double acc = 0.0;
        for (std::size_t r = rows[i].begin; r < rows[i].end; ++r) {
          for (std::size_t q = cols[j].begin; q < cols[j].end; ++q) acc += x.at(ch, r, q);
        }
        const double count = static_cast<double>((rows[i].end - rows[i].begin) * (cols[j].end - cols[j].begin));
        out.at(ch, i, j) = acc / count;
      }
    }
  }
  return g.record(std::move(out), {input}, [=](Graph& gr, std::span<const double> go) {
    auto gx = gr.grad_buffer(input);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < out_len; ++i) {
        for (std::size_t j = 0; j < out_len; ++j) {
          const double count = static_cast<double>((rows[i].end - rows[i].begin) * (cols[j].end - cols[j].begin));
          const double share = go[(ch * out_len + i) * out_len + j] / count;
          for (std::size_t r = rows[i].begin; r < rows[i].end; ++r) {
            for (std::size_t q = cols[j].begin; q < cols[j].end; ++q) gx[(ch * h + r) * w + q] += share;
          }
        }
      }
    }
  });
}

Var linear(Var input, Var weight, Var bias) {
  Graph& g = same_graph({input, weight, bias});
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  if (w.rank() != 2) throw ContractError("linear: weight must be M x D, got " + shape_str(w.shape()));
  const std::size_t m = w.dim(0), d = w.dim(1);
  if (x.size() != d) {
    throw ContractError("linear: input length " + std::to_string(x.size()) + " does not match weight axis 1 (" +
                        std::to_string(d) + ")");
  }
  if (b.size() != m) throw ContractError("linear: bias length " + std::to_string(b.size()) + " != " + std::to_string(m));
  Tensor out(Shape{m});
  const auto xd = x.data();
  const auto wd = w.data();
  for (std::size_t r = 0; r < m; ++r) {
    double acc = b[r];
    const double* row = wd.data() + r * d;
    for (std::size_t i = 0; i < d; ++i) acc += row[i] * xd[i];
    out[r] = acc;
  }
  return g.record(std::move(out), {input, weight, bias}, [=](Graph& gr, std::span<const double> go) {
    const auto xv = gr.value(input).data();
    const auto wv = gr.value(weight).data();
    if (gr.requires_grad(bias)) add_into(gr.grad_buffer(bias), go);
    if (gr.requires_grad(weight)) {
      auto gw = gr.grad_buffer(weight);
      for (std::size_t r = 0; r < m; ++r) {
        const double gr_r = go[r];
        if (gr_r == 0.0) continue;
        double* row = gw.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) row[i] += gr_r * xv[i];
      }
    }
    if (gr.requires_grad(input)) {
      auto gx = gr.grad_buffer(input);
      for (std::size_t r = 0; r < m; ++r) {
        const double gr_r = go[r];
        if (gr_r == 0.0) continue;
        const double* row = wv.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) gx[i] += gr_r * row[i];
      }
    }
  });
}

Var relu(Var input) {
  Graph& g = same_graph({input});
  Tensor out = input.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return g.record(std::move(out), {input}, [=](Graph& gr, std::span<const double> go) {
    const auto xv = gr.value(input).data();
    auto gx = gr.grad_buffer(input);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += go[i];
    }
  });
}

Var add(Var a, Var b) {
  Graph& g = same_graph({a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw ContractError("add: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return g.record(std::move(out), {a, b}, [=](Graph& gr, std::span<const double> go) {
    if (gr.requires_grad(a)) add_into(gr.grad_buffer(a), go);
    if (gr.requires_grad(b)) add_into(gr.grad_buffer(b), go);
  });
}

Var scale(Var input, double factor) {
  Graph& g = same_graph({input});
  Tensor out = input.value();
  for (auto& v : out.data()) v *= factor;
  return g.record(std::move(out), {input}, [=](Graph& gr, std::span<const double> go) {
    auto gx = gr.grad_buffer(input);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * go[i];
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat: no parts");
  Graph* g = parts.front().graph;
  std::vector<std::size_t> offsets;
  std::vector<double> data;
  for (const auto& p : parts) {
    if (p.graph != g) throw ContractError("concat: operands live on different graphs");
    offsets.push_back(data.size());
    const auto pd = p.value().data();
    data.insert(data.end(), pd.begin(), pd.end());
  }
  const std::size_t n = data.size();
  return g->record(Tensor(Shape{n}, std::move(data)), parts, [=](Graph& gr, std::span<const double> go) {
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (!gr.requires_grad(parts[i])) continue;
      auto gp = gr.grad_buffer(parts[i]);
      add_into(gp, go.subspan(offsets[i], gp.size()));
    }
  });
}

Var reshape(Var input, Shape shape) {
  Graph& g = same_graph({input});
  Tensor out = input.value();
  out.reshape(std::move(shape));
  return g.record(std::move(out), {input}, [=](Graph& gr, std::span<const double> go) {
    add_into(gr.grad_buffer(input), go);
  });
}

Var flatten(Var input) { return reshape(input, Shape{input.size()}); }

Var sum(Var input) {
  Graph& g = same_graph({input});
  double acc = 0.0;
  for (double v : input.value().data()) acc += v;
  return g.record(Tensor::scalar(acc), {input}, [=](Graph& gr, std::span<const double> go) {
    for (auto& v : gr.grad_buffer(input)) v += go[0];
  });
}

Var sum_leading(Var input) {
  Graph& g = same_graph({input});
  const Tensor& x = input.value();
  if (x.rank() < 2) throw ContractError("sum_leading: need rank >= 2, got " + shape_str(x.shape()));
  Shape rest(x.shape().begin() + 1, x.shape().end());
  const std::size_t lead = x.dim(0), inner = shape_size(rest);
  Tensor out(rest);
  for (std::size_t k = 0; k < lead; ++k) {
    for (std::size_t i = 0; i < inner; ++i) out[i] += x[k * inner + i];
  }
  return g.record(std::move(out), {input}, [=](Graph& gr, std::span<const double> go) {
    auto gx = gr.grad_buffer(input);
    for (std::size_t k = 0; k < lead; ++k) {
      for (std::size_t i = 0; i < inner; ++i) gx[k * inner + i] += go[i];
    }
  });
}

Var select(Var input, std::vector<std::size_t> flat_indices) {
  Graph& g = same_graph({input});
  const Tensor& x = input.value();
  Tensor out(Shape{flat_indices.size()});
  for (std::size_t i = 0; i < flat_indices.size(); ++i) {
    if (flat_indices[i] >= x.size()) {
      throw ContractError("select: index " + std::to_string(flat_indices[i]) + " out of bounds for " +
                          shape_str(x.shape()));
    }
    out[i] = x[flat_indices[i]];
  }
  return g.record(std::move(out), {input}, [=, idx = std::move(flat_indices)](Graph& gr, std::span<const double> go) {
    auto gx = gr.grad_buffer(input);
    for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += go[i];
  });
}

Var gather_at(Var input, const std::vector<GridPoint>& points) {
  const Tensor& x = input.value();
  if (x.rank() != 3) throw ContractError("gather_at: input must be C x H x W, got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<std::size_t> idx;
  idx.reserve(points.size() * c);
  for (const auto& p : points) {
    if (p.row >= h || p.col >= w) {
      throw ContractError("gather_at: point (" + std::to_string(p.row) + ", " + std::to_string(p.col) +
                          ") outside " + std::to_string(h) + "x" + std::to_string(w) + " grid");
    }
    for (std::size_t ch = 0; ch < c; ++ch) idx.push_back((ch * h + p.row) * w + p.col);
  }
  return reshape(select(input, std::move(idx)), Shape{points.size(), c});
}

ArgMax argmax2d(std::span<const double> map, std::size_t height, std::size_t width) {
  if (map.empty() || map.size() != height * width) throw ContractError("argmax2d: map must be a non-empty H x W grid");
  std::size_t best = 0;
  for (std::size_t i = 1; i < map.size(); ++i) {
    if (map[i] > map[best]) best = i;
  }
  return ArgMax{best / width, best % width, map[best]};
}

ArgMax argmax2d(const Tensor& map) {
  if (map.rank() != 2) throw ContractError("argmax2d: expected H x W, got " + shape_str(map.shape()));
  return argmax2d(map.data(), map.dim(0), map.dim(1));
}

}  // namespace kpc
