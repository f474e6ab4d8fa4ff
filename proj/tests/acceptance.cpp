// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 1 for ctest).
//
//   acceptance [--workdir DIR] [--cli PATH] [--only N]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kpc/accounting.hpp"
#include "kpc/gradcheck.hpp"
#include "kpc/graph.hpp"
#include "kpc/losses.hpp"
#include "kpc/okpd.hpp"
#include "kpc/run_config.hpp"
#include "kpc/toybench.hpp"
#include "oracles.hpp"

using namespace kpc;
namespace fs = std::filesystem;

namespace {

// Pinned at the first green run of the default toy configuration
// (condensed accuracy 1.000, recall 0.884; baseline accuracy 0.445).
constexpr double kPinnedAccuracy = 0.975;
constexpr double kPinnedRecall = 0.85;

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome baseline_counts() {
  const auto voc = preset_report("baseline-fpn-voc").total_params;
  const auto coco = preset_report("baseline-fpn-coco").total_params;
  return {voc == 14003305 && coco == 14310805,
          "voc " + std::to_string(voc) + " (want 14003305), coco " + std::to_string(coco) + " (want 14310805)"};
}

Outcome condensed_counts() {
  const auto voc = preset_report("condensed-fpn-voc");
  const auto coco = preset_report("condensed-fpn-coco");
  const double ev = std::abs(double(voc.total_params) / 6.8e6 - 1.0);
  const double ec = std::abs(double(coco.total_params) / 7.1e6 - 1.0);
  const double rv = voc.reduction_ratio().value_or(-1), rc = coco.reduction_ratio().value_or(-1);
  const bool ok = ev <= 0.02 && ec <= 0.02 && rv >= 0.48 && rv <= 0.54 && rc >= 0.48 && rc <= 0.54;
  return {ok, "voc " + std::to_string(voc.total_params) + fmt(" (%.2f%% off 6.8M", 100 * ev) +
                  fmt(", reduction %.4f)", rv) + ", coco " + std::to_string(coco.total_params) +
                  fmt(" (%.2f%% off 7.1M", 100 * ec) + fmt(", reduction %.4f)", rc)};
}

Outcome smallest_head() {
  HeadConfig h;
  OkpdConfig o;
  const auto base = preset_report("baseline-fpn-voc").total_params;
  const auto rows = sweep(h, o, base, {1}, {1});
  return {rows[0].ratio <= 0.05, "K1,L1 " + std::to_string(rows[0].params) + fmt(" params, ratio %.4f", rows[0].ratio)};
}

Outcome oracle_equivalence(const std::string& cli) {
  std::mt19937_64 rng(4242);
  double worst = 0.0;
  auto track = [&](const Tensor& a, const Tensor& b) { worst = std::max(worst, oracle::max_abs_diff(a, b)); };
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t groups = 1 + rng() % 2, cin = groups * (1 + rng() % 4), cout = groups * (1 + rng() % 4);
    const std::size_t hw = 3 + rng() % 5, k = rng() % 2 ? 3 : 1, dil = 1 + rng() % 2;
    auto x = oracle::random_tensor({cin, hw, hw}, rng);
    auto w = oracle::random_tensor({cout, cin / groups, k, k}, rng);
    auto b = oracle::random_tensor({cout}, rng);
    Graph g;
    const std::size_t pad = same_padding(k, dil);
    track(conv2d(g.constant(x), g.constant(w), g.constant(b), {groups, dil, pad}).value(),
          oracle::conv2d(x, w, b, int(groups), int(dil), int(pad)));
    const std::size_t len = 1 + rng() % hw;
    track(adaptive_avg_pool(g.constant(x), len).value(), oracle::adaptive_avg_pool(x, len));

    auto lw = oracle::random_tensor({cout, x.size()}, rng);
    auto lin = linear(g.constant(x), g.constant(lw), g.constant(b));
    auto lref = oracle::linear({x.data().begin(), x.data().end()}, lw, b);
    track(lin.value(), Tensor({cout}, lref));

    Tensor r(x.shape()), s(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      r[i] = x[i] > 0 ? x[i] : 0.0;
      s[i] = x[i] + x[i];
    }
    track(relu(g.constant(x)).value(), r);
    track(add(g.constant(x), g.constant(x)).value(), s);

    auto cat = concat({g.constant(b), g.constant(x)});
    Tensor cref({b.size() + x.size()});
    for (std::size_t i = 0; i < b.size(); ++i) cref[i] = b[i];
    for (std::size_t i = 0; i < x.size(); ++i) cref[b.size() + i] = x[i];
    track(cat.value(), cref);

    Tensor lead({hw, hw});
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t i = 0; i < hw * hw; ++i) lead[i] += x[c * hw * hw + i];
    track(sum_leading(g.constant(x)).value(), lead);

    std::vector<GridPoint> pts;
    for (int i = 0; i < 4; ++i) pts.push_back({rng() % hw, rng() % hw});
    Tensor gref({pts.size(), cin});
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t c = 0; c < cin; ++c) gref[i * cin + c] = x.at(c, pts[i].row, pts[i].col);
    track(gather_at(g.constant(x), pts).value(), gref);

    track(tmr_squash(g.constant(x), 0.5, 0.1).value(), oracle::tmr(x, 0.5, 0.1));
  }

  double grad_worst = 0.0;
  bool grads_ok = true;
  std::string failing;
  for (const auto& r : run_gradcheck_suite(GradCheckOptions{})) {
    grad_worst = std::max(grad_worst, r.max_rel_error);
    if (!r.passed) {
      grads_ok = false;
      failing += " " + r.op;
    }
  }

  bool cli_ok = true;
  std::string cli_note;
  if (!cli.empty()) {
    const int rc = std::system((cli + " gradcheck > /dev/null").c_str());
    cli_ok = rc == 0;
    cli_note = cli_ok ? ", cli gradcheck exit 0" : ", cli gradcheck failed";
  }
  return {worst <= 1e-12 && grads_ok && cli_ok,
          fmt("forward max |diff| %.2e", worst) + fmt(", gradient max rel err %.2e", grad_worst) + failing + cli_note};
}

Outcome tmr_properties() {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> scale_pick(0.0, 1.0);
  std::size_t bad_range = 0, bad_max = 0, bad_order = 0, bad_linear = 0, linear_maps = 0;
  for (int n = 0; n < 10000; ++n) {
    const double scale = std::pow(10.0, 2.0 * scale_pick(rng) - 1.0);  // 0.1 .. 10
    const double shift = (scale_pick(rng) - 0.7) * scale;
    auto raw = oracle::random_tensor({1, 7, 7}, rng, shift - scale, shift + scale);
    auto out = tmr_squash(raw, 0.5, 0.1);
    double mx = 0.0, cm = raw[0];
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (!(out[i] >= 0.0 && out[i] < 1.0)) ++bad_range;
      mx = std::max(mx, out[i]);
      cm = std::max(cm, raw[i]);
    }
    if (!(mx < 1.0)) ++bad_max;
    for (std::size_t i = 0; i < out.size(); ++i)
      for (std::size_t j = 0; j < out.size(); ++j)
        if (raw[i] < raw[j] && out[i] > out[j]) ++bad_order;
    if (cm <= 0.5) {
      ++linear_maps;
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double want = std::max(0.0, (raw[i] + 0.5) / 1.1);
        if (std::abs(out[i] - want) > 1e-15) ++bad_linear;
      }
    }
  }
  auto z = tmr_squash(Tensor({1, 2, 2}), 0.5, 0.1);
  auto e = tmr_squash(Tensor({1, 1, 3}, {-1.0, 0.3, 1.5}), 0.5, 0.1);
  const bool examples = z[0] == 0.5 / 1.1 && e[0] == 0.0 && std::abs(e[1] - 0.8 / 2.1) <= 1e-16 &&
                        std::abs(e[2] - 2.0 / 2.1) <= 1e-16;
  std::ostringstream os;
  os << "10000 maps (" << linear_maps << " in the linear regime): range violations " << bad_range << ", max "
     << bad_max << ", order " << bad_order << ", linear identity " << bad_linear;
  char buf[160];
  std::snprintf(buf, sizeof buf, "; zero map %.12f, [-1,0.3,1.5] -> [%.0f, %.12f, %.12f]", z[0], e[0], e[1], e[2]);
  os << buf;
  return {bad_range + bad_max + bad_order + bad_linear == 0 && examples && linear_maps > 0, os.str()};
}

Outcome mechanism() {
  const RunConfig cfg = RunConfig::load("default");
  const auto [train_set, test_set] = generate_dataset(cfg.dataset_spec());

  ToyModel condensed(cfg.model_config());
  const auto log_c = train(condensed, train_set, cfg.train_config());
  const EvalMetrics mc = evaluate(condensed, test_set);

  RunConfig bcfg = cfg;
  bcfg.model = "baseline";
  ToyModel baseline(bcfg.model_config());
  train(baseline, train_set, bcfg.train_config());
  const EvalMetrics mb = evaluate(baseline, test_set);

  const double recall = mc.key_part_recall.value_or(0.0);
  const bool ok = log_c.size() <= 30 && mc.accuracy >= 0.90 && mc.accuracy >= mb.accuracy - 0.03 &&
                  recall >= 0.8 && mc.accuracy >= kPinnedAccuracy && recall >= kPinnedRecall;
  std::ostringstream os;
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "K%zu,L%zu after %zu epochs: condensed acc %.4f, baseline acc %.4f (gap %+.1f pp), "
                "recall %.4f vs chance %.4f (D*K/(H*W)) / %.4f (tolerant); pinned acc >= %.3f, recall >= %.2f",
                cfg.num_parts, cfg.sub_len, log_c.size(), mc.accuracy, mb.accuracy,
                100.0 * (mc.accuracy - mb.accuracy), recall, mc.chance_level, mc.chance_level_tolerant,
                kPinnedAccuracy, kPinnedRecall);
  os << buf;
  return {ok, os.str()};
}

Outcome loss_contracts() {
  bool ok = true;
  std::ostringstream os;
  {
    Graph g;
    Tensor perfect({2, 3, 3});
    perfect.at(0, 0, 0) = 1.0;
    perfect.at(1, 2, 2) = 1.0;
    Tensor neg({2, 3, 3});
    std::vector<Var> maps{g.constant(perfect), g.constant(neg)};
    std::vector<int> y{1, 0};
    const double ld = discriminative_loss(maps, y).value().item();
    const double lu = uniqueness_loss(maps, y).value().item();
    ok = ok && ld == 0.0 && lu == 0.0;
    os << "perfect fixtures L_d " << ld << ", L_u " << lu;
  }
  {
    Graph g;
    Tensor m({2, 3, 3});
    m.at(0, 1, 1) = 0.5;
    m.at(1, 0, 2) = 1.0;
    std::vector<Var> maps{g.constant(m)};
    std::vector<int> y{1};
    const double ld = discriminative_loss(maps, y).value().item();
    ok = ok && ld == 0.125;
    os << "; peaks (0.5, 1.0) L_d " << ld;
  }
  {
    Graph g;
    Tensor m({2, 3, 3});
    m.at(0, 1, 1) = 0.9;
    m.at(1, 1, 1) = 0.9;
    std::vector<Var> maps{g.constant(m)};
    std::vector<int> y{1};
    const double lu = uniqueness_loss(maps, y).value().item();
    ok = ok && std::abs(lu - 0.32) <= 1e-15;
    char buf[64];
    std::snprintf(buf, sizeof buf, "; twin 0.9 peaks L_u %.15f", lu);
    os << buf;
  }
  return {ok, os.str()};
}

Outcome determinism(const fs::path& work, const std::string& cli) {
  fs::remove_all(work);
  fs::create_directories(work);
  bool ok = true;
  std::string how;
  if (!cli.empty()) {
    how = "cli";
    for (const char* tag : {"a", "b"}) {
      const std::string t(tag);
      const std::string gen = cli + " toy gen --seed 1 --out " + (work / (t + ".bin")).string() + " > /dev/null";
      const std::string trn = cli + " toy train --config default --out " + (work / (t + ".params")).string() +
                              " > /dev/null";
      ok = ok && std::system(gen.c_str()) == 0 && std::system(trn.c_str()) == 0;
    }
  } else {
    how = "in-process";
    const RunConfig cfg = RunConfig::load("default");
    for (const char* tag : {"a", "b"}) {
      const std::string t(tag);
      const auto [tr, te] = generate_dataset(cfg.dataset_spec());
      write_dataset(work / (t + ".bin"), tr);
      write_dataset(work / (t + ".test.bin"), te);
      ToyModel m(cfg.model_config());
      train(m, tr, cfg.train_config());
      save_params(work / (t + ".params"), m, {"config " + cfg.dump_compact()});
    }
  }
  std::vector<std::string> differ;
  for (const char* f : {".bin", ".test.bin", ".params", ".params.manifest"}) {
    const auto a = slurp(work / ("a" + std::string(f)));
    const auto b = slurp(work / ("b" + std::string(f)));
    if (a.empty() || a != b) differ.push_back(f);
  }
  ok = ok && differ.empty();
  std::string note = how + ": dataset, test split, parameters and manifest ";
  note += differ.empty() ? "byte-identical across two runs" : "differ";
  for (const auto& d : differ) note += " " + d;
  return {ok, note};
}

Outcome accounting_consistency() {
  std::mt19937_64 rng(2718);
  std::size_t mismatches = 0;
  std::ostringstream os;
  for (int i = 0; i < 20; ++i) {
    OkpdConfig o;
    HeadConfig h;
    h.channels = o.channels = std::size_t{16} << (rng() % 4);  // 16 .. 128
    o.groups = 2;
    h.num_parts = o.num_parts = 1 + rng() % 16;
    h.sub_len = 1 + rng() % 7;
    h.hidden = 8 + rng() % 64;
    h.num_classes = 1 + rng() % 20;
    h.reg_per_class = rng() % 2;
    auto model = CondensedModel::init(o, h, 1000 + i);
    const auto inst = model.scalar_count();
    const auto counted = count_params_condensed(h, o).total_params;
    if (inst != counted) {
      ++mismatches;
      os << " [K" << h.num_parts << " L" << h.sub_len << " C" << h.channels << ": " << inst << " vs " << counted << "]";
    }
  }
  return {mismatches == 0, "20 random (K, L, C) configs, mismatches " + std::to_string(mismatches) + os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "kpc_acceptance";
  std::string cli;
  int only = 0;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string a = argv[i];
    if (a == "--workdir") work = argv[i + 1];
    else if (a == "--cli") cli = argv[i + 1];
    else if (a == "--only") only = std::atoi(argv[i + 1]);
  }

  const std::vector<Criterion> criteria{
      {1, "baseline parameter reconstruction", 1.0, baseline_counts},
      {2, "condensed parameter reconstruction", 1.0, condensed_counts},
      {3, "K1,L1 keeps at most 5% of the baseline", 1.0, smallest_head},
      {4, "oracle equivalence and gradient check", 120.0, [&] { return oracle_equivalence(cli); }},
      {5, "TMR property suite", 10.0, tmr_properties},
      {6, "toy mechanism validation", 600.0, mechanism},
      {7, "loss contracts", 1.0, loss_contracts},
      {8, "determinism of gen and train", 600.0, [&] { return determinism(work / "determinism", cli); }},
      {9, "accounting matches instantiated models", 5.0, accounting_consistency},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::printf("%s %d %s: %s (%.2f s, budget %.0f s%s)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                secs, c.budget_s, in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria failed\n", failed, only ? 1 : int(criteria.size()));
  return failed == 0 ? 0 : 1;
}
