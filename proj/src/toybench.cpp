#include "kpc/toybench.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "kpc/errors.hpp"
#include "kpc/losses.hpp"

namespace kpc {

void ToyDatasetSpec::validate() const {
  if (channels == 0 || height == 0 || width == 0 || num_classes == 0 || parts_per_class == 0 || n_train == 0 ||
      n_test == 0) {
    throw ConfigError("toy dataset: all counts must be positive");
  }
  if (parts_per_class > height * width) throw ConfigError("toy dataset: parts_per_class exceeds H*W");
  if (!(noise_sigma >= 0.0)) throw ConfigError("toy dataset: noise_sigma must be non-negative");
  if (!(background_fraction >= 0.0 && background_fraction <= 1.0)) {
    throw ConfigError("toy dataset: background_fraction must lie in [0, 1]");
  }
  if (channels > 0xFFFF || height > 0xFF || width > 0xFF || num_classes > 0xFE || parts_per_class > 0xFFFF) {
    throw ConfigError("toy dataset: extents exceed the file format's field widths");
  }
}

namespace {

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t split, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

// Round-trip through float so in-memory data equals what the file stores.
double as_stored(double v) { return static_cast<double>(static_cast<float>(v)); }

bool is_background(std::size_t i, std::size_t n, std::size_t n_bg) {
  return (i * n_bg) / n != ((i + 1) * n_bg) / n;
}

ToyExample make_example(const ToyDatasetSpec& spec, const std::vector<std::vector<std::vector<double>>>& sigs,
                        std::uint64_t split, std::size_t index, bool background) {
  auto rng = stream_rng(spec.seed, split, index);
  const std::size_t c = spec.channels, h = spec.height, w = spec.width;
  ToyExample ex;
  ex.x = Tensor(Shape{c, h, w});
  if (!background) {
    ex.y_hat = 1;
    ex.class_id = 1 + static_cast<int>(rng() % spec.num_classes);
    std::vector<std::size_t> cells(h * w);
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
    for (std::size_t j = 0; j < spec.parts_per_class; ++j) {
      const std::size_t pick = j + static_cast<std::size_t>(rng() % (cells.size() - j));
      std::swap(cells[j], cells[pick]);
      ex.planted_points.push_back(GridPoint{cells[j] / w, cells[j] % w});
    }
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto& v : ex.x.data()) v = spec.noise_sigma * noise(rng);
  if (!background) {
    const auto& class_sigs = sigs[static_cast<std::size_t>(ex.class_id - 1)];
    std::size_t r0 = h, r1 = 0, c0 = w, c1 = 0;
    for (std::size_t j = 0; j < ex.planted_points.size(); ++j) {
      const auto p = ex.planted_points[j];
      for (std::size_t ch = 0; ch < c; ++ch) ex.x.at(ch, p.row, p.col) += class_sigs[j][ch];
      r0 = std::min(r0, p.row);
      r1 = std::max(r1, p.row);
      c0 = std::min(c0, p.col);
      c1 = std::max(c1, p.col);
    }
    const double fw = static_cast<double>(w), fh = static_cast<double>(h);
    ex.box_target = {as_stored((static_cast<double>(c0 + c1) + 1.0) / 2.0 / fw),
                     as_stored((static_cast<double>(r0 + r1) + 1.0) / 2.0 / fh),
                     as_stored(static_cast<double>(c1 - c0 + 1) / fw), as_stored(static_cast<double>(r1 - r0 + 1) / fh)};
  }
  for (auto& v : ex.x.data()) v = as_stored(v);
  return ex;
}

ToyDataset make_split(const ToyDatasetSpec& spec, const std::vector<std::vector<std::vector<double>>>& sigs,
                      std::uint64_t split, std::size_t n) {
  ToyDataset d;
  d.spec = spec;
  const auto n_bg = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.background_fraction));
  d.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) d.examples.push_back(make_example(spec, sigs, split, i, is_background(i, n, n_bg)));
  return d;
}

}  // namespace

std::vector<std::vector<std::vector<double>>> class_signatures(const ToyDatasetSpec& spec) {
  spec.validate();
  auto rng = stream_rng(spec.seed, 0, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<std::vector<double>>> sigs(spec.num_classes);
  for (auto& cls : sigs) {
    for (std::size_t j = 0; j < spec.parts_per_class; ++j) {
      std::vector<double> v(spec.channels);
      double norm = 0.0;
      for (auto& e : v) {
        e = normal(rng);
        norm += e * e;
      }
      norm = std::sqrt(norm);
      for (auto& e : v) e = e / norm * spec.signature_norm;
      cls.push_back(std::move(v));
    }
  }
  return sigs;
}

std::pair<ToyDataset, ToyDataset> generate_dataset(const ToyDatasetSpec& spec) {
  spec.validate();
  const auto sigs = class_signatures(spec);
  return {make_split(spec, sigs, 1, spec.n_train), make_split(spec, sigs, 2, spec.n_test)};
}

namespace {

constexpr char kMagic[4] = {'O', 'K', 'P', 'D'};
constexpr std::uint16_t kFormatVersion = 1;
constexpr std::size_t kHeaderBytes = 32;

void put_le(std::string& buf, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& buf, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  put_le(buf, bits, 4);
}

class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  std::uint64_t le(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  double f32() {
    const auto bits = static_cast<std::uint32_t>(le(4));
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return static_cast<double>(f);
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > data_.size()) throw IoError(origin_ + ": truncated file");
  }
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void dump(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const ToyDataset& data) {
  const auto& s = data.spec;
  s.validate();
  std::string buf(kMagic, 4);
  put_le(buf, kFormatVersion, 2);
  for (auto v : {s.channels, s.height, s.width, s.num_classes, s.parts_per_class}) put_le(buf, v, 2);
  put_le(buf, data.examples.size(), 4);
  put_le(buf, s.seed, 8);
  buf.resize(kHeaderBytes, '\0');
  for (const auto& ex : data.examples) {
    if (ex.x.size() != s.channels * s.height * s.width) throw ContractError("write_dataset: example shape mismatch");
    put_le(buf, static_cast<std::uint64_t>(ex.y_hat), 1);
    put_le(buf, static_cast<std::uint64_t>(ex.class_id), 1);
    for (double b : ex.box_target) put_f32(buf, b);
    for (std::size_t j = 0; j < s.parts_per_class; ++j) {
      if (ex.planted_points.empty()) {
        put_le(buf, 0xFFFF, 2);
      } else {
        put_le(buf, ex.planted_points.at(j).row, 1);
        put_le(buf, ex.planted_points.at(j).col, 1);
      }
    }
    for (double v : ex.x.data()) put_f32(buf, v);
  }
  dump(path, buf);
}

ToyDataset read_dataset(const std::filesystem::path& path) {
  Reader r(slurp(path), path.string());
  if (r.raw(4) != std::string(kMagic, 4)) throw IoError(path.string() + ": not a dataset file (bad magic)");
  const auto version = r.le(2);
  if (version != kFormatVersion) throw IoError(path.string() + ": unsupported format version " + std::to_string(version));
  ToyDataset d;
  auto& s = d.spec;
  s.channels = r.le(2);
  s.height = r.le(2);
  s.width = r.le(2);
  s.num_classes = r.le(2);
  s.parts_per_class = r.le(2);
  const auto n = r.le(4);
  s.seed = r.le(8);
  if (r.raw(kHeaderBytes - 28) != std::string(kHeaderBytes - 28, '\0')) {
    throw IoError(path.string() + ": reserved header bytes are not zero");
  }
  s.n_train = n;
  s.n_test = n;
  for (std::uint64_t i = 0; i < n; ++i) {
    ToyExample ex;
    ex.y_hat = static_cast<int>(r.le(1));
    ex.class_id = static_cast<int>(r.le(1));
    for (auto& b : ex.box_target) b = r.f32();
    for (std::size_t j = 0; j < s.parts_per_class; ++j) {
      const auto row = r.le(1), col = r.le(1);
      if (row == 0xFF && col == 0xFF) continue;
      ex.planted_points.push_back(GridPoint{row, col});
    }
    ex.x = Tensor(Shape{s.channels, s.height, s.width});
    for (auto& v : ex.x.data()) v = r.f32();
    d.examples.push_back(std::move(ex));
  }
  if (!r.at_end()) throw IoError(path.string() + ": trailing bytes after last example");
  return d;
}

ToyModel::ToyModel(const ToyModelConfig& cfg) : cfg_(cfg) {
  if (cfg.kind == ModelKind::condensed) {
    condensed_ = CondensedModel::init(cfg.okpd, cfg.head, cfg.init_seed);
    condensed_->gather_refined = cfg.gather_refined;
  } else {
    baseline_ = BaselineModel::init(cfg.baseline, cfg.init_seed);
  }
}

ToyModel::Forward ToyModel::forward(Var x) {
  if (condensed_) {
    auto f = full_condensed_forward(x, *condensed_);
    HeadOutputVars out = f.out;
    return Forward{out, std::move(f)};
  }
  return Forward{baseline_forward(x, *baseline_), std::nullopt};
}

bool ToyModel::reg_per_class() const { return condensed_ ? cfg_.head.reg_per_class : cfg_.baseline.reg_per_class; }

std::size_t ToyModel::num_parts() const { return condensed_ ? cfg_.head.num_parts : 0; }

void ToyModel::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  if (condensed_) {
    condensed_->for_each(fn);
  } else {
    baseline_->for_each(fn);
  }
}

std::size_t ToyModel::scalar_count() {
  std::size_t n = 0;
  for_each([&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("train: learning rate must be non-negative");
  if (epochs < 1) throw ConfigError("train: epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train: batch size must be at least 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must lie in [0, 1)");
}

namespace {

std::size_t argmax_index(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace

std::vector<EpochLog> train(ToyModel& model, const ToyDataset& data, const TrainConfig& cfg,
                            const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.examples.empty()) throw ConfigError("train: empty dataset");
  std::vector<Tensor*> params;
  model.for_each([&](const std::string&, Tensor& t) { params.push_back(&t); });
  std::vector<std::vector<double>> velocity;
  for (auto* p : params) velocity.emplace_back(p->size(), 0.0);

  const std::size_t n = data.examples.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(cfg.seed);
  const bool condensed = model.kind() == ModelKind::condensed;
  const double part_scale = cfg.okpd_mean && condensed ? 1.0 / static_cast<double>(model.num_parts()) : 1.0;

  std::vector<EpochLog> log;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    EpochLog row;
    row.epoch = epoch;
    std::size_t correct = 0;
    for (std::size_t start = 0, batch = 0; start < n; start += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      for (auto* p : params) p->zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const ToyExample& ex = data.examples[order[b]];
        Graph g;
        Var x = g.constant(ex.x);
        auto f = model.forward(x);
        Var det = toy_detection_loss(f.out.cls, f.out.reg, static_cast<std::size_t>(ex.class_id), ex.box_target,
                                     model.reg_per_class());
        Var total = det;
        double ld = 0.0, lu = 0.0;
        if (condensed) {
          const Var maps[1] = {f.condensed->maps};
          const int labels[1] = {ex.y_hat};
          Var ldv = discriminative_loss(maps, labels);
          Var luv = uniqueness_loss(maps, labels);
          ld = ldv.value().item();
          lu = luv.value().item();
          const double w = cfg.okpd_weight * part_scale;
          if (cfg.use_ld && w != 0.0) total = add(total, scale(ldv, w));
          if (cfg.use_lu && cfg.okpd_weight != 0.0) total = add(total, scale(luv, cfg.okpd_weight));
        }
        const double loss = total.value().item();
        if (!std::isfinite(loss)) {
          throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(batch));
        }
        row.det_loss += det.value().item();
        row.l_d += ld;
        row.l_u += lu;
        if (argmax_index(to_output(f.out).cls) == static_cast<std::size_t>(ex.class_id)) ++correct;
        g.backward(total);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto data_span = params[k]->data();
        auto grad = params[k]->grad();
        auto& vel = velocity[k];
        for (std::size_t i = 0; i < vel.size(); ++i) {
          vel[i] = cfg.momentum * vel[i] - cfg.learning_rate * grad[i] * inv;
          data_span[i] += vel[i];
        }
      }
    }
    const double dn = static_cast<double>(n);
    row.det_loss /= dn;
    row.l_d /= dn;
    row.l_u /= dn;
    row.acc = static_cast<double>(correct) / dn;
    log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  for (auto* p : params) p->drop_grad();
  return log;
}

std::string metrics_csv_header() { return "epoch,det_loss,l_d,l_u,acc"; }

std::string metrics_csv_row(const EpochLog& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g", r.epoch, r.det_loss, r.l_d, r.l_u, r.acc);
  return buf;
}

double key_part_recall(const std::vector<std::vector<GridPoint>>& extracted,
                       const std::vector<std::vector<GridPoint>>& planted) {
  if (extracted.size() != planted.size()) throw ContractError("key_part_recall: example counts differ");
  std::size_t hits = 0, total = 0;
  for (std::size_t e = 0; e < planted.size(); ++e) {
    for (const auto& p : planted[e]) {
      ++total;
      for (const auto& q : extracted[e]) {
        const auto dr = p.row > q.row ? p.row - q.row : q.row - p.row;
        const auto dc = p.col > q.col ? p.col - q.col : q.col - p.col;
        if (dr <= 1 && dc <= 1) {
          ++hits;
          break;
        }
      }
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

double chance_recall_tolerant(std::size_t h, std::size_t w, std::size_t k) {
  const double area = static_cast<double>(h * w);
  double acc = 0.0;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t rows = std::min(r + 1, h - 1) - (r ? r - 1 : 0) + 1;
      const std::size_t cols = std::min(c + 1, w - 1) - (c ? c - 1 : 0) + 1;
      acc += 1.0 - std::pow(1.0 - static_cast<double>(rows * cols) / area, static_cast<double>(k));
    }
  }
  return acc / area;
}

EvalMetrics evaluate(ToyModel& model, const ToyDataset& data) {
  if (data.examples.empty()) throw ConfigError("evaluate: empty dataset");
  const auto& s = data.spec;
  EvalMetrics m;
  std::size_t correct = 0, fg = 0, bg = 0;
  double box_err = 0.0, fg_peak = 0.0, bg_peak = 0.0, distinct = 0.0;
  std::vector<std::vector<GridPoint>> extracted, planted;
  for (const auto& ex : data.examples) {
    Graph g;
    auto f = model.forward(g.constant(ex.x));
    const HeadOutput out = to_output(f.out);
    if (argmax_index(out.cls) == static_cast<std::size_t>(ex.class_id)) ++correct;
    if (ex.class_id > 0) {
      const std::size_t base = model.reg_per_class() ? 4 * static_cast<std::size_t>(ex.class_id - 1) : 0;
      for (std::size_t i = 0; i < 4; ++i) box_err += std::abs(out.reg[base + i] - ex.box_target[i]) / 4.0;
    }
    if (f.condensed) {
      const auto& parts = f.condensed->parts;
      double peak = 0.0;
      for (double c : parts.confidences) peak += c;
      peak /= static_cast<double>(parts.confidences.size());
      if (ex.y_hat) {
        fg_peak += peak;
        extracted.push_back(parts.points);
        planted.push_back(ex.planted_points);
        std::set<std::pair<std::size_t, std::size_t>> uniq;
        for (const auto& p : parts.points) uniq.insert({p.row, p.col});
        distinct += static_cast<double>(uniq.size());
      } else {
        bg_peak += peak;
      }
    }
    (ex.y_hat ? fg : bg) += 1;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(data.examples.size());
  m.box_error = fg ? box_err / static_cast<double>(fg) : 0.0;
  const std::size_t k = model.num_parts();
  m.chance_level = static_cast<double>(s.parts_per_class * k) / static_cast<double>(s.height * s.width);
  if (model.kind() == ModelKind::condensed) {
    m.key_part_recall = key_part_recall(extracted, planted);
    m.chance_level_tolerant = chance_recall_tolerant(s.height, s.width, k);
    m.fg_peak = fg ? fg_peak / static_cast<double>(fg) : 0.0;
    m.bg_peak = bg ? bg_peak / static_cast<double>(bg) : 0.0;
    m.distinct_parts = fg ? distinct / static_cast<double>(fg) : 0.0;
  }
  return m;
}

std::string format_metrics(const EvalMetrics& m) {
  char buf[512];
  if (m.key_part_recall) {
    std::snprintf(buf, sizeof buf,
                  "accuracy,box_error,key_part_recall,chance_level,chance_level_tolerant,fg_peak,bg_peak,"
                  "distinct_parts\n%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  m.accuracy, m.box_error, *m.key_part_recall, m.chance_level, m.chance_level_tolerant, m.fg_peak,
                  m.bg_peak, m.distinct_parts);
  } else {
    std::snprintf(buf, sizeof buf, "accuracy,box_error\n%.6f,%.6f\n", m.accuracy, m.box_error);
  }
  return buf;
}

std::vector<double> normalize_unit(std::span<const double> values) {
  std::vector<double> out(values.size(), 0.5);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*hi == *lo) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / (*hi - *lo);
  return out;
}

void write_pgm(const std::filesystem::path& path, std::span<const double> values, std::size_t h, std::size_t w) {
  if (values.size() != h * w) throw ContractError("write_pgm: value count does not match extents");
  std::string buf = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (double v : values) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    buf.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
  dump(path, buf);
}

std::vector<double> read_pgm(const std::filesystem::path& path, std::size_t& h, std::size_t& w) {
  const std::string bytes = slurp(path);
  std::istringstream is(bytes);
  std::string magic;
  int maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255 || !is) throw IoError(path.string() + ": not an 8-bit binary graymap");
  is.get();
  const auto offset = static_cast<std::size_t>(is.tellg());
  if (offset + h * w != bytes.size()) throw IoError(path.string() + ": pixel payload size mismatch");
  std::vector<double> out(h * w);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<unsigned char>(bytes[offset + i]) / 255.0;
  return out;
}

std::vector<std::filesystem::path> export_heatmaps(ToyModel& model, const ToyExample& example,
                                                   const std::filesystem::path& out_dir) {
  if (model.kind() != ModelKind::condensed) throw ConfigError("heatmaps need a condensed model");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  auto& cm = model.condensed();
  Graph g;
  Var x = g.constant(example.x);
  auto f = full_condensed_forward(x, cm);
  const Tensor& maps = f.maps.value();
  const std::size_t k = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
  std::vector<std::filesystem::path> files;
  for (std::size_t i = 0; i < k; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "part_%02zu.pgm", i);
    files.push_back(out_dir / name);
    write_pgm(files.back(), maps.data().subspan(i * h * w, h * w), h, w);
  }
  // Global activation map: relu, sum over channels, min-max normalize.
  const Tensor& act = global_activations(x, cm.head, cm.head_cfg).value();
  const std::size_t l = act.dim(1);
  std::vector<double> summed(l * l, 0.0);
  for (std::size_t ch = 0; ch < act.dim(0); ++ch) {
    for (std::size_t i = 0; i < l * l; ++i) summed[i] += std::max(0.0, act[ch * l * l + i]);
  }
  files.push_back(out_dir / "global.pgm");
  write_pgm(files.back(), normalize_unit(summed), l, l);

  std::ostringstream side;
  side << "# part row col confidence shown(confidence > " << kShownConfidence << ")\n";
  for (std::size_t i = 0; i < k; ++i) {
    const auto p = f.parts.points[i];
    const double c = f.parts.confidences[i];
    side << i << ' ' << p.row << ' ' << p.col << ' ' << c << ' ' << (c > kShownConfidence ? 1 : 0) << '\n';
  }
  dump(out_dir / "keyparts.txt", side.str());
  return files;
}

void save_params(const std::filesystem::path& path, ToyModel& model, const std::vector<std::string>& header) {
  std::string payload;
  std::ostringstream manifest;
  manifest << "# kpcondense parameters v1\n";
  for (const auto& line : header) manifest << "# " << line << '\n';
  manifest << "# name shape byte_offset\n";
  model.for_each([&](const std::string& name, Tensor& t) {
    manifest << name << ' ' << shape_str(t.shape()) << ' ' << payload.size() << '\n';
    for (double v : t.data()) put_f32(payload, v);
  });
  dump(path, payload);
  dump(path.string() + ".manifest", manifest.str());
}

std::vector<std::string> read_manifest_header(const std::filesystem::path& path) {
  std::istringstream is(slurp(path.string() + ".manifest"));
  std::string line;
  std::vector<std::string> out;
  std::getline(is, line);
  if (line != "# kpcondense parameters v1") throw IoError(path.string() + ".manifest: unrecognized manifest");
  while (std::getline(is, line) && line.rfind("# ", 0) == 0) {
    if (line == "# name shape byte_offset") break;
    out.push_back(line.substr(2));
  }
  return out;
}

void load_params(const std::filesystem::path& path, ToyModel& model) {
  std::istringstream is(slurp(path.string() + ".manifest"));
  std::map<std::string, std::pair<std::string, std::size_t>> entries;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string name, shape;
    std::size_t offset = 0;
    if (!(ls >> name >> shape >> offset)) throw IoError("malformed manifest line: " + line);
    entries[name] = {shape, offset};
  }
  const std::string payload = slurp(path);
  model.for_each([&](const std::string& name, Tensor& t) {
    auto it = entries.find(name);
    if (it == entries.end()) throw IoError("parameter file lacks tensor " + name);
    if (it->second.first != shape_str(t.shape())) {
      throw IoError("tensor " + name + " has shape " + it->second.first + ", model expects " + shape_str(t.shape()));
    }
    const std::size_t off = it->second.second;
    if (off + 4 * t.size() > payload.size()) throw IoError("parameter payload too short for " + name);
    Reader r(payload.substr(off, 4 * t.size()), path.string());
    for (auto& v : t.data()) v = r.f32();
  });
}

}  // namespace kpc
