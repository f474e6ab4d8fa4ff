#include <cmath>
#include <functional>
#include <random>

#include "kpc/condense.hpp"
#include "kpc/gradcheck.hpp"
#include "kpc/graph.hpp"
#include "kpc/losses.hpp"
#include "kpc/okpd.hpp"

namespace kpc {

namespace {

// Builds a scalar loss from Vars bound to the leaf tensors. Leaves are bound
// with Graph::parameter so backward() accumulates into their grad buffers;
// builders may also reach the same tensors through a model.
using LossBuilder = std::function<Var(Graph&, const std::vector<Var>&)>;

struct Leaf {
  std::string name;
  Tensor* tensor;
};

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Random projection to a scalar so every output element carries gradient.
Var project(Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Graph& g = *out.graph;
  Tensor w = random_tensor(Shape{1, out.size()}, rng);
  return sum(linear(out, g.constant(std::move(w)), g.constant(Tensor(Shape{1}))));
}

double eval_loss(const std::vector<Leaf>& leaves, const LossBuilder& build) {
  Graph g;
  std::vector<Var> vars;
  for (const auto& l : leaves) vars.push_back(g.parameter(*l.tensor));
  return build(g, vars).value().item();
}

void check_leaves(GradCheckResult& res, const std::vector<Leaf>& leaves, const LossBuilder& build,
                  const GradCheckOptions& opts, std::size_t trial, bool corrupt) {
  for (const auto& l : leaves) l.tensor->zero_grad();
  {
    Graph g;
    std::vector<Var> vars;
    for (const auto& l : leaves) vars.push_back(g.parameter(*l.tensor));
    g.backward(build(g, vars));
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& l : leaves) {
    const auto gr = l.tensor->grad();
    analytic.emplace_back(gr.begin(), gr.end());
    l.tensor->drop_grad();
  }
  if (corrupt && !analytic.empty() && !analytic[0].empty()) analytic[0][0] += 1e-2;

  const double h = opts.step;
  const double f0 = eval_loss(leaves, build);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto t = leaves[li].tensor->data();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + h;
      const double up = eval_loss(leaves, build);
      t[i] = orig - h;
      const double down = eval_loss(leaves, build);
      t[i] = orig;
      const double fwd = (up - f0) / h, bwd = (f0 - down) / h;
      if (std::abs(fwd - bwd) > 1e-3 * std::max({1.0, std::abs(fwd), std::abs(bwd)})) {
        ++res.skipped;
        continue;
      }
      const double err = grad_rel_error(analytic[li][i], (up - down) / (2.0 * h));
      ++res.checked;
      if (res.worst_location.empty() || err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_location = leaves[li].name + "[" + std::to_string(i) + "] trial " + std::to_string(trial);
      }
    }
  }
}

// Pushes values away from 0 so relu-style kinks sit outside the probe window.
void avoid_zero(Tensor& t, double margin) {
  for (auto& v : t.data()) {
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
  }
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opts) {
  std::vector<GradCheckResult> results;
  using Body = std::function<void(GradCheckResult&, std::size_t, std::mt19937_64&)>;
  auto run = [&](const std::string& op, const Body& body) {
    GradCheckResult res;
    res.op = op;
    for (std::size_t t = 0; t < opts.trials; ++t) {
      std::mt19937_64 rng(opts.seed * 1000003ULL + t * 7919ULL + results.size());
      body(res, t, rng);
    }
    res.passed = res.checked > 0 && res.max_rel_error < opts.tolerance;
    results.push_back(res);
  };

  run("conv2d", [&](GradCheckResult& res, std::size_t t, std::mt19937_64& rng) {
    Tensor x = random_tensor({4, 5, 5}, rng), w = random_tensor({6, 2, 3, 3}, rng), b = random_tensor({6}, rng);
    check_leaves(res, {{"input", &x}, {"weight", &w}, {"bias", &b}}, [&](Graph&, const std::vector<Var>& v) {
      return project(conv2d(v[0], v[1], v[2], Conv2dOptions{2, 2, 2}), 11 + t);
    }, opts, t, opts.inject_fault);
  });
  run("adaptive_avg_pool", [&](GradCheckResult& res, std::size_t t, std::mt19937_64& rng) {
    Tensor x = random_tensor({3, 7, 7}, rng);
    check_leaves(res, {{"input", &x}}, [&](Graph&, const std::vector<Var>& v) {
      return project(adaptive_avg_pool(v[0], 5), 12 + t);
    }, opts, t, false);
  });
  run("linear", [&](GradCheckResult& res, std::size_t t, std::mt19937_64& rng) {
    Tensor x = random_tensor({8}, rng), w = random_tensor({3, 8}, rng), b = random_tensor({3}, rng);
    check_leaves(res, {{"input", &x}, {"weight", &w}, {"bias", &b}}, [&](Graph&, const std::vector<Var>& v) {
      return project(linear(v[0], v[1], v[2]), 13 + t);
    }, opts, t, false);
  });
  run("relu", [&](GradCheckResult& res, std::size_t t, std::mt19937_64& rng) {
    Tensor x = random_tensor({20}, rng);
    avoid_zero(x, 1e-3);
    check_leaves(res, {{"input", &x}}, [&](Graph&, const std::vector<Var>& v) {
      return project(relu(v[0]), 14 + t);
    }, opts, t, false);
  });
  run("add", [&](GradCheckResult& res, std::size_t t, std::mt19937_64& rng) {
    Tensor a = random_tensor({2, 3, 3}, rng), b = random_tensor({2, 3, 3}, rng);
    check_leaves(res, {{"a", &a}, {"b", &b}}, [&](Graph&, const std::vector<Var>& v) {
      return project(add(v[0], v[1]), 15 + t);
    }, opts, t, false);
  });
  run("concat", [&](GradCheckResult& res, std::size_t t, std::mt19937_64& rng) {
    Tensor a = random_tensor({3}, rng), b = random_tensor({2, 2}, rng);
    check_leaves(res, {{"a", &a}, {"b", &b}}, [&](Graph&, const std::vector<Var>& v) {
      return project(concat({v[0], v[1]}), 16 + t);
    }, opts, t, false);
  });
  run("gather_at", [&](GradCheckResult& res, std::size_t t, std::mt19937_64& rng) {
    const std::vector<GridPoint> pts{{0, 0}, {2, 3}, {4, 4}, {2, 3}};
    Tensor x = random_tensor({3, 5, 5}, rng);
    check_leaves(res, {{"input", &x}}, [&](Graph&, const std::vector<Var>& v) {
      return project(gather_at(v[0], pts), 17 + t);
    }, opts, t, false);
  });
  run("sum_leading", [&](GradCheckResult& res, std::size_t t, std::mt19937_64& rng) {
    Tensor x = random_tensor({3, 4, 4}, rng);
    check_leaves(res, {{"input", &x}}, [&](Graph&, const std::vector<Var>& v) {
      return project(sum_leading(v[0]), 18 + t);
    }, opts, t, false);
  });
  run("tmr_squash", [&](GradCheckResult& res, std::size_t t, std::mt19937_64& rng) {
    // Peaks above 1 - alpha exercise the truncated (competing) regime.
    Tensor raw = random_tensor({3, 5, 5}, rng, -1.0, 2.0);
    check_leaves(res, {{"raw", &raw}}, [&](Graph&, const std::vector<Var>& v) {
      return project(tmr_squash(v[0], 0.5, 0.1), 19 + t);
    }, opts, t, false);
  });
  run("okpd_objective", [&](GradCheckResult& res, std::size_t t, std::mt19937_64& rng) {
    Tensor r0 = random_tensor({3, 5, 5}, rng, -1.0, 2.0), r1 = random_tensor({3, 5, 5}, rng, -1.0, 2.0);
    check_leaves(res, {{"raw0", &r0}, {"raw1", &r1}}, [&](Graph&, const std::vector<Var>& v) {
      const Var maps[2] = {tmr_squash(v[0], 0.5, 0.1), tmr_squash(v[1], 0.5, 0.1)};
      const int labels[2] = {1, 0};
      return okpd_objective(maps, labels);
    }, opts, t, false);
  });
  run("toy_detection_loss", [&](GradCheckResult& res, std::size_t t, std::mt19937_64& rng) {
    Tensor cls = random_tensor({4}, rng, -2.0, 2.0), reg = random_tensor({12}, rng);
    check_leaves(res, {{"cls", &cls}, {"reg", &reg}}, [&](Graph&, const std::vector<Var>& v) {
      return toy_detection_loss(v[0], v[1], 1 + t % 3, {0.5, 0.4, 0.3, 0.2}, true);
    }, opts, t, false);
  });
  run("condensed_head", [&](GradCheckResult& res, std::size_t t, std::mt19937_64& rng) {
    OkpdConfig oc;
    oc.channels = 2;
    oc.num_parts = 2;
    oc.reduction = 2;
    oc.groups = 1;
    HeadConfig hc;
    hc.channels = 2;
    hc.num_parts = 2;
    hc.sub_len = 3;
    hc.channel_keep = 0.5;
    hc.hidden = 8;
    hc.num_classes = 2;
    CondensedModel model = CondensedModel::init(oc, hc, rng());
    Tensor x = random_tensor({2, 7, 7}, rng);
    std::vector<Leaf> leaves{{"x", &x}};
    model.for_each([&](const std::string& name, Tensor& p) { leaves.push_back({name, &p}); });
    check_leaves(res, leaves, [&](Graph&, const std::vector<Var>& v) {
      // v[1..] alias the model's own tensors; the forward binds them again.
      auto f = full_condensed_forward(v[0], model);
      Var det = toy_detection_loss(f.out.cls, f.out.reg, 1, {0.5, 0.5, 0.3, 0.3}, true);
      const Var maps[1] = {f.maps};
      const int labels[1] = {1};
      return add(det, okpd_objective(maps, labels));
    }, opts, t, false);
  });
  return results;
}

}  // namespace kpc
