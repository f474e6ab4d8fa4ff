#include "kpc/accounting.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "kpc/errors.hpp"

namespace kpc {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::fc: return "fc";
    case LayerKind::pool: return "pool";
    case LayerKind::gather: return "gather";
    case LayerKind::concat: return "concat";
    case LayerKind::activation: return "activation";
  }
  return "?";
}

std::optional<double> ParamReport::reduction_ratio() const {
  if (!baseline_params || *baseline_params == 0) return std::nullopt;
  return 1.0 - static_cast<double>(total_params) / static_cast<double>(*baseline_params);
}

std::optional<double> ParamReport::size_ratio() const {
  if (!baseline_params || *baseline_params == 0) return std::nullopt;
  return static_cast<double>(total_params) / static_cast<double>(*baseline_params);
}

namespace {

void check_layer(const LayerSpec& l) {
  if (l.in_channels == 0 || l.out_channels == 0 || l.in_h == 0 || l.in_w == 0 || l.out_h == 0 || l.out_w == 0 ||
      l.kernel == 0 || l.groups == 0 || l.dilation == 0) {
    throw ConfigError("layer '" + l.name + "': extents must be positive");
  }
  if (l.kind == LayerKind::conv) {
    if (l.in_channels % l.groups != 0 || l.out_channels % l.groups != 0) {
      throw ConfigError("layer '" + l.name + "': groups do not divide channels");
    }
  }
}

ReportRow count_layer(const LayerSpec& l) {
  check_layer(l);
  ReportRow row{l.name, 0, 0};
  const std::uint64_t k2 = static_cast<std::uint64_t>(l.kernel) * l.kernel;
  switch (l.kind) {
    case LayerKind::conv: {
      const std::uint64_t per_out = k2 * (l.in_channels / l.groups);
      row.params = per_out * l.out_channels + (l.bias ? l.out_channels : 0);
      row.macs = per_out * l.out_channels * l.out_h * l.out_w;
      break;
    }
    case LayerKind::fc:
      row.params = static_cast<std::uint64_t>(l.in_channels) * l.out_channels + (l.bias ? l.out_channels : 0);
      row.macs = static_cast<std::uint64_t>(l.in_channels) * l.out_channels;
      break;
    default:
      break;
  }
  return row;
}

}  // namespace

ParamReport count_params(const std::vector<LayerSpec>& layers) {
  if (layers.empty()) throw ConfigError("empty layer list");
  ParamReport report;
  for (const auto& l : layers) {
    report.rows.push_back(count_layer(l));
    report.total_params += report.rows.back().params;
    report.total_macs += report.rows.back().macs;
  }
  return report;
}

ParamReport count_macs(const std::vector<LayerSpec>& layers) { return count_params(layers); }

std::vector<LayerSpec> okpd_layers(const OkpdConfig& cfg, std::size_t h, std::size_t w, const std::string& prefix) {
  cfg.validate();
  std::vector<LayerSpec> out;
  const std::size_t c = cfg.channels, r = cfg.reduced_channels();
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    const std::string p = prefix + ".block" + std::to_string(b);
    out.push_back({p + ".reduce", LayerKind::conv, c, r, h, w, h, w, 3, cfg.groups, cfg.dilation, true});
    out.push_back({p + ".relu", LayerKind::activation, r, r, h, w, h, w, 1, 1, 1, false});
    out.push_back({p + ".restore", LayerKind::conv, r, c, h, w, h, w, 1, 1, 1, true});
  }
  out.push_back({prefix + ".predict", LayerKind::conv, c, cfg.num_parts, h, w, h, w, 1, 1, 1, true});
  out.push_back({prefix + ".tmr", LayerKind::activation, cfg.num_parts, cfg.num_parts, h, w, h, w, 1, 1, 1, false});
  return out;
}

std::vector<LayerSpec> condensed_layers(const HeadConfig& hc, const OkpdConfig& oc) {
  check_compatible(oc, hc);
  const std::size_t c = hc.channels, h = hc.height, w = hc.width, l = hc.sub_len, kept = hc.kept_channels();
  auto out = okpd_layers(oc, h, w);
  out.push_back({"key_parts.gather", LayerKind::gather, c, hc.num_parts * c, h, w, 1, 1, 1, 1, 1, false});
  out.push_back({"global.pool", LayerKind::pool, c, c, h, w, l, l, 1, 1, 1, false});
  out.push_back({"global.reduce", LayerKind::conv, c, kept, l, l, l, l, 1, 1, 1, true});
  out.push_back({"descriptor.concat", LayerKind::concat, hc.descriptor_len(), hc.descriptor_len(), 1, 1, 1, 1, 1, 1,
                 1, false});
  out.push_back({"fc", LayerKind::fc, hc.descriptor_len(), hc.hidden});
  out.push_back({"fc.relu", LayerKind::activation, hc.hidden, hc.hidden, 1, 1, 1, 1, 1, 1, 1, false});
  out.push_back({"cls", LayerKind::fc, hc.hidden, hc.cls_outputs()});
  out.push_back({"reg", LayerKind::fc, hc.hidden, hc.reg_outputs()});
  return out;
}

std::vector<LayerSpec> baseline_two_fc_layers(std::size_t c, std::size_t h, std::size_t w, std::size_t hidden,
                                              std::size_t cls_out, std::size_t reg_out) {
  return {
      {"fc1", LayerKind::fc, c * h * w, hidden},
      {"fc1.relu", LayerKind::activation, hidden, hidden, 1, 1, 1, 1, 1, 1, 1, false},
      {"fc2", LayerKind::fc, hidden, hidden},
      {"fc2.relu", LayerKind::activation, hidden, hidden, 1, 1, 1, 1, 1, 1, 1, false},
      {"cls", LayerKind::fc, hidden, cls_out},
      {"reg", LayerKind::fc, hidden, reg_out},
  };
}

ParamReport count_params_condensed(const HeadConfig& head_cfg, const OkpdConfig& okpd_cfg) {
  ParamReport r = count_params(condensed_layers(head_cfg, okpd_cfg));
  r.title = "condensed head K" + std::to_string(head_cfg.num_parts) + ",L" + std::to_string(head_cfg.sub_len);
  return r;
}

namespace {

struct Dataset {
  const char* suffix;
  std::size_t num_classes;
};

constexpr Dataset kVoc{"voc", 20};
constexpr Dataset kCoco{"coco", 80};

void prefix_layers(std::vector<LayerSpec>& layers, const std::string& prefix) {
  for (auto& l : layers) l.name = prefix + "." + l.name;
}

OkpdConfig fpn_okpd(std::size_t k) {
  OkpdConfig o;
  o.channels = 256;
  o.num_parts = k;
  return o;
}

HeadConfig fpn_head(std::size_t k, std::size_t l, std::size_t classes, bool per_class = true) {
  HeadConfig h;
  h.channels = 256;
  h.num_parts = k;
  h.sub_len = l;
  h.num_classes = classes;
  h.reg_per_class = per_class;
  return h;
}

HeadPreset baseline_fpn(const Dataset& d) {
  HeadPreset p;
  p.name = std::string("baseline-fpn-") + d.suffix;
  p.description = "FPN two-FC head: 256x7x7 -> fc 1024 -> fc 1024 -> cls/reg";
  p.notes.push_back("regressor emits 4 offsets for each of the " + std::to_string(d.num_classes + 1) +
                    " classifier outputs");
  p.layers = baseline_two_fc_layers(256, 7, 7, 1024, d.num_classes + 1, 4 * (d.num_classes + 1));
  return p;
}

HeadPreset condensed_fpn(const Dataset& d) {
  HeadPreset p;
  p.name = std::string("condensed-fpn-") + d.suffix;
  p.description = "condensed FPN head, K16,L5 on 256x7x7";
  p.head_cfg = fpn_head(16, 5, d.num_classes);
  p.okpd_cfg = fpn_okpd(16);
  p.layers = condensed_layers(*p.head_cfg, *p.okpd_cfg);
  p.baseline = std::string("baseline-fpn-") + d.suffix;
  return p;
}

// ResNet res5 stage (three bottlenecks, stride 2 in the first) on 1024x14x14
// RoI features, global average pool, then cls/reg on the 2048-d vector.
HeadPreset baseline_faster(const Dataset& d) {
  HeadPreset p;
  p.name = std::string("baseline-faster-rcnn") + (d.num_classes == 20 ? "" : "-coco");
  p.description = "Faster R-CNN C4 head: ResNet res5 stage + avgpool + cls/reg";
  p.notes.push_back("conv layers counted with biases; batch-norm affine terms not counted");
  auto conv = [](std::string name, std::size_t cin, std::size_t cout, std::size_t k, std::size_t in_hw,
                 std::size_t out_hw) {
    return LayerSpec{std::move(name), LayerKind::conv, cin, cout, in_hw, in_hw, out_hw, out_hw, k, 1, 1, true};
  };
  auto& L = p.layers;
  L.push_back(conv("res5a.conv1", 1024, 512, 1, 14, 7));
  L.push_back(conv("res5a.conv2", 512, 512, 3, 7, 7));
  L.push_back(conv("res5a.conv3", 512, 2048, 1, 7, 7));
  L.push_back(conv("res5a.downsample", 1024, 2048, 1, 14, 7));
  for (const char* b : {"res5b", "res5c"}) {
    L.push_back(conv(std::string(b) + ".conv1", 2048, 512, 1, 7, 7));
    L.push_back(conv(std::string(b) + ".conv2", 512, 512, 3, 7, 7));
    L.push_back(conv(std::string(b) + ".conv3", 512, 2048, 1, 7, 7));
  }
  L.push_back({"avgpool", LayerKind::pool, 2048, 2048, 7, 7, 1, 1, 1, 1, 1, false});
  L.push_back({"cls", LayerKind::fc, 2048, d.num_classes + 1});
  L.push_back({"reg", LayerKind::fc, 2048, 4 * (d.num_classes + 1)});
  return p;
}

HeadPreset condensed_faster(const Dataset& d) {
  HeadPreset p;
  p.name = std::string("condensed-faster-rcnn") + (d.num_classes == 20 ? "" : "-coco");
  p.description = "condensed Faster R-CNN head, K4,L3 on 1024x7x7, four concentration blocks";
  p.notes.push_back("RoI grid taken as 7x7; the source architecture does not fix it for the condensed head");
  HeadConfig h = fpn_head(4, 3, d.num_classes);
  h.channels = 1024;
  OkpdConfig o = fpn_okpd(4);
  o.channels = 1024;
  o.num_blocks = 4;
  p.head_cfg = h;
  p.okpd_cfg = o;
  p.layers = condensed_layers(h, o);
  p.baseline = std::string("baseline-faster-rcnn") + (d.num_classes == 20 ? "" : "-coco");
  return p;
}

// Position-sensitive R-FCN head: 1x1 conv 2048 -> 1024, then position-sensitive
// score maps (7x7 bins) for classes and class-agnostic boxes.
HeadPreset baseline_rfcn(const Dataset& d) {
  HeadPreset p;
  p.name = std::string("baseline-rfcn") + (d.num_classes == 20 ? "" : "-coco");
  p.description = "R-FCN head: 1x1 conv 2048->1024, position-sensitive cls (7x7x(C+1)) and reg (7x7x8) convs";
  p.notes.push_back("MACs use a nominal 7x7 map; the real head runs on the whole image");
  const std::size_t bins = 49;
  p.layers = {
      {"reduce", LayerKind::conv, 2048, 1024, 7, 7, 7, 7, 1, 1, 1, true},
      {"reduce.relu", LayerKind::activation, 1024, 1024, 7, 7, 7, 7, 1, 1, 1, false},
      {"ps_cls", LayerKind::conv, 1024, bins * (d.num_classes + 1), 7, 7, 7, 7, 1, 1, 1, true},
      {"ps_reg", LayerKind::conv, 1024, bins * 8, 7, 7, 7, 7, 1, 1, 1, true},
      {"psroi.pool", LayerKind::pool, bins * (d.num_classes + 1), d.num_classes + 1, 7, 7, 1, 1, 1, 1, 1, false},
  };
  return p;
}

HeadPreset condensed_rfcn(const Dataset& d) {
  HeadPreset p;
  p.name = std::string("condensed-rfcn") + (d.num_classes == 20 ? "" : "-coco");
  p.description = "condensed R-FCN head, channels reduced to 256, K16,L3, no hidden FC";
  p.notes.push_back("no hidden FC: classifier and regressor attach directly to the concatenated descriptor");
  HeadConfig h = fpn_head(16, 3, d.num_classes);
  OkpdConfig o = fpn_okpd(16);
  auto layers = condensed_layers(h, o);
  std::vector<LayerSpec> kept;
  kept.push_back({"reduce", LayerKind::conv, 2048, 256, 7, 7, 7, 7, 1, 1, 1, true});
  for (auto& l : layers) {
    if (l.name == "fc" || l.name == "fc.relu") continue;
    if (l.name == "cls" || l.name == "reg") l.in_channels = h.descriptor_len();
    kept.push_back(l);
  }
  p.layers = std::move(kept);
  p.baseline = std::string("baseline-rfcn") + (d.num_classes == 20 ? "" : "-coco");
  return p;
}

HeadPreset baseline_cascade(const Dataset& d) {
  HeadPreset p;
  p.name = std::string("baseline-cascade") + (d.num_classes == 20 ? "" : "-coco");
  p.description = "Cascade R-CNN: three FPN two-FC stages with class-agnostic regression";
  for (int s = 0; s < 3; ++s) {
    auto stage = baseline_two_fc_layers(256, 7, 7, 1024, d.num_classes + 1, 4);
    prefix_layers(stage, "stage" + std::to_string(s));
    p.layers.insert(p.layers.end(), stage.begin(), stage.end());
  }
  return p;
}

HeadPreset condensed_cascade(const Dataset& d) {
  HeadPreset p;
  p.name = std::string("condensed-cascade") + (d.num_classes == 20 ? "" : "-coco");
  p.description = "condensed Cascade R-CNN: three K16,L5 stages with 2/3/4 concentration blocks";
  p.notes.push_back("class-agnostic regression in every stage, as in the baseline cascade");
  const std::size_t blocks[3] = {2, 3, 4};
  for (int s = 0; s < 3; ++s) {
    HeadConfig h = fpn_head(16, 5, d.num_classes, false);
    OkpdConfig o = fpn_okpd(16);
    o.num_blocks = blocks[s];
    auto stage = condensed_layers(h, o);
    prefix_layers(stage, "stage" + std::to_string(s));
    p.layers.insert(p.layers.end(), stage.begin(), stage.end());
  }
  p.baseline = std::string("baseline-cascade") + (d.num_classes == 20 ? "" : "-coco");
  return p;
}

const std::vector<std::pair<std::string, std::function<HeadPreset()>>>& registry() {
  static const std::vector<std::pair<std::string, std::function<HeadPreset()>>> presets = {
      {"baseline-fpn-voc", [] { return baseline_fpn(kVoc); }},
      {"baseline-fpn-coco", [] { return baseline_fpn(kCoco); }},
      {"condensed-fpn-voc", [] { return condensed_fpn(kVoc); }},
      {"condensed-fpn-coco", [] { return condensed_fpn(kCoco); }},
      {"baseline-faster-rcnn", [] { return baseline_faster(kVoc); }},
      {"baseline-faster-rcnn-coco", [] { return baseline_faster(kCoco); }},
      {"condensed-faster-rcnn", [] { return condensed_faster(kVoc); }},
      {"condensed-faster-rcnn-coco", [] { return condensed_faster(kCoco); }},
      {"baseline-rfcn", [] { return baseline_rfcn(kVoc); }},
      {"baseline-rfcn-coco", [] { return baseline_rfcn(kCoco); }},
      {"condensed-rfcn", [] { return condensed_rfcn(kVoc); }},
      {"condensed-rfcn-coco", [] { return condensed_rfcn(kCoco); }},
      {"baseline-cascade", [] { return baseline_cascade(kVoc); }},
      {"baseline-cascade-coco", [] { return baseline_cascade(kCoco); }},
      {"condensed-cascade", [] { return condensed_cascade(kVoc); }},
      {"condensed-cascade-coco", [] { return condensed_cascade(kCoco); }},
  };
  return presets;
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : registry()) names.push_back(name);
  return names;
}

HeadPreset find_preset(const std::string& name) {
  for (const auto& [n, make] : registry()) {
    if (n == name) return make();
  }
  throw ConfigError("unknown preset '" + name + "'");
}

ParamReport preset_report(const std::string& name) {
  const HeadPreset p = find_preset(name);
  ParamReport r = count_params(p.layers);
  r.title = p.name + ": " + p.description;
  r.notes = p.notes;
  if (!p.baseline.empty()) r.baseline_params = count_params(find_preset(p.baseline).layers).total_params;
  return r;
}

std::vector<SweepRow> sweep(const HeadConfig& base, const OkpdConfig& okpd_cfg, std::uint64_t baseline_params,
                            const std::vector<std::size_t>& ks, const std::vector<std::size_t>& ls) {
  if (baseline_params == 0) throw ConfigError("sweep: baseline parameter count must be positive");
  std::vector<SweepRow> rows;
  for (auto k : ks) {
    for (auto l : ls) {
      HeadConfig h = base;
      OkpdConfig o = okpd_cfg;
      h.num_parts = k;
      o.num_parts = k;
      h.sub_len = l;
      const auto total = count_params_condensed(h, o).total_params;
      rows.push_back({k, l, total, static_cast<double>(total) / static_cast<double>(baseline_params)});
    }
  }
  return rows;
}

namespace {

std::string with_commas(std::uint64_t v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

}  // namespace

std::string format_table(const ParamReport& r) {
  std::size_t name_w = 5;
  for (const auto& row : r.rows) name_w = std::max(name_w, row.layer.size());
  std::ostringstream os;
  if (!r.title.empty()) os << "# " << r.title << '\n';
  for (const auto& n : r.notes) os << "# note: " << n << '\n';
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %15s %18s\n", static_cast<int>(name_w), "layer", "params", "macs");
  os << buf;
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%-*s %15s %18s\n", static_cast<int>(name_w), row.layer.c_str(),
                  with_commas(row.params).c_str(), with_commas(row.macs).c_str());
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-*s %15s %18s\n", static_cast<int>(name_w), "total",
                with_commas(r.total_params).c_str(), with_commas(r.total_macs).c_str());
  os << buf;
  if (r.baseline_params) {
    std::snprintf(buf, sizeof buf, "baseline params %s, size ratio %.4f, reduction %.4f\n",
                  with_commas(*r.baseline_params).c_str(), *r.size_ratio(), *r.reduction_ratio());
    os << buf;
  }
  return os.str();
}

std::string format_csv(const ParamReport& r) {
  std::ostringstream os;
  os << "layer,params,macs\n";
  for (const auto& row : r.rows) os << row.layer << ',' << row.params << ',' << row.macs << '\n';
  os << "total," << r.total_params << ',' << r.total_macs << '\n';
  return os.str();
}

std::string format_sweep(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%4s %4s %15s %8s\n", "K", "L", "params", "ratio");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%4zu %4zu %15s %8.4f\n", r.num_parts, r.sub_len, with_commas(r.params).c_str(),
                  r.ratio);
    os << buf;
  }
  return os.str();
}

}  // namespace kpc
