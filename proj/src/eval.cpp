#include "fateseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "fateseg/error.hpp"
#include "fateseg/rng.hpp"

using nlohmann::json;

namespace fateseg {

double dice(std::span<const uint8_t> a, std::span<const uint8_t> b) {
  if (a.size() != b.size())
    fail(Err::DimMismatch, std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  size_t na = 0, nb = 0, inter = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const bool xa = a[i] != 0, xb = b[i] != 0;
    na += xa;
    nb += xb;
    inter += xa && xb;
  }
  if (na + nb == 0) return 1.0;  // both empty: a correct prediction of absence
  return 2.0 * double(inter) / double(na + nb);
}

double dice_label(const LabelVolume& a, const LabelVolume& b, uint16_t label) {
  if (a.dims != b.dims) fail(Err::DimMismatch, "label volumes differ in dims");
  size_t na = 0, nb = 0, inter = 0;
  for (size_t i = 0; i < a.labels.size(); ++i) {
    const bool xa = a.labels[i] == label, xb = b.labels[i] == label;
    na += xa;
    nb += xb;
    inter += xa && xb;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(inter) / double(na + nb);
}

DiceReport DiceReport::from_rows(std::vector<DiceRow> rows) {
  DiceReport r;
  r.rows = std::move(rows);
  std::map<uint16_t, std::vector<double>> by_label;
  for (const auto& row : r.rows) by_label[row.label].push_back(row.dice);
  double sum_means = 0.0;
  for (const auto& [label, scores] : by_label) {
    DiceStats st;
    st.n_volumes = int(scores.size());
    double m = 0.0;
    for (double s : scores) m += s;
    m /= double(scores.size());
    double v = 0.0;
    for (double s : scores) v += (s - m) * (s - m);
    st.mean = m;
    st.stddev = scores.size() > 1 ? std::sqrt(v / double(scores.size())) : 0.0;
    r.per_object[label] = st;
    sum_means += m;
  }
  r.overall_mean = by_label.empty() ? 0.0 : sum_means / double(by_label.size());
  return r;
}

void split_support_test(const std::vector<std::string>& ids, double fraction, uint64_t seed,
                        std::vector<std::string>& support_out,
                        std::vector<std::string>& test_out) {
  if (ids.size() < 2) fail(Err::TooFewVolumes, "need at least 2 volumes to split");
  if (!(fraction > 0.0 && fraction < 1.0)) fail(Err::ConfigParse, "fraction must be in (0, 1)");
  std::vector<std::string> order = ids;
  std::sort(order.begin(), order.end());
  DetRng rng("eval/split", seed);
  for (size_t i = order.size() - 1; i > 0; --i) {
    const size_t k = size_t(rng.next_int(0, int64_t(i)));
    std::swap(order[i], order[k]);
  }
  size_t n_support = size_t(std::llround(fraction * double(order.size())));
  n_support = std::max<size_t>(1, std::min(n_support, order.size() - 1));
  support_out.assign(order.begin(), order.begin() + n_support);
  test_out.assign(order.begin() + n_support, order.end());
}

AblationAxis parse_ablation_axis(const std::string& name) {
  if (name == "support_size") return AblationAxis::SupportSize;
  if (name == "example_count") return AblationAxis::ExampleCount;
  if (name == "metric") return AblationAxis::Metric;
  if (name == "initial_slice") return AblationAxis::InitialSlice;
  if (name == "consistency") return AblationAxis::Consistency;
  if (name == "encoder_size") return AblationAxis::EncoderSize;
  fail(Err::InvalidAxisValue, "unknown ablation axis '" + name + "'");
}

const char* ablation_axis_name(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::SupportSize: return "support_size";
    case AblationAxis::ExampleCount: return "example_count";
    case AblationAxis::Metric: return "metric";
    case AblationAxis::InitialSlice: return "initial_slice";
    case AblationAxis::Consistency: return "consistency";
    case AblationAxis::EncoderSize: return "encoder_size";
  }
  return "?";
}

namespace {

int find_volume(const EvalDataset& data, const std::string& id) {
  for (size_t i = 0; i < data.ids.size(); ++i)
    if (data.ids[i] == id) return int(i);
  fail(Err::MissingFile, "volume id '" + id + "' not in dataset");
}

}  // namespace

DiceReport evaluate_split(const EvalDataset& data, const std::vector<std::string>& support_ids,
                          const std::vector<std::string>& test_ids, const PipelineConfig& cfg) {
  std::vector<SupportVolume> support;
  for (const auto& id : support_ids) {
    const int i = find_volume(data, id);
    support.push_back({data.ids[i], data.images[i], data.labels[i]});
  }
  SupportLibrary lib =
      build_library(support, cfg.encoder, cfg.axis, cfg.l2_normalize_embeddings, cfg.threads);
  std::vector<DiceRow> rows;
  for (const auto& id : test_ids) {
    const int i = find_volume(data, id);
    SegmentationResult res = segment_volume(data.images[i], lib, cfg);
    for (uint16_t label : lib.object_labels)
      rows.push_back({id, label, dice_label(res.labels, data.labels[i], label)});
  }
  return DiceReport::from_rows(std::move(rows));
}

std::vector<AblationRow> run_ablation(AblationAxis axis, const std::vector<std::string>& values,
                                      const PipelineConfig& base, const EvalDataset& data,
                                      double support_fraction, uint64_t split_seed) {
  if (values.empty()) fail(Err::InvalidAxisValue, "no grid values");
  std::vector<std::string> support_ids, test_ids;
  split_support_test(data.ids, support_fraction, split_seed, support_ids, test_ids);

  std::vector<AblationRow> out;
  for (const std::string& value : values) {
    PipelineConfig cfg = base;
    std::vector<std::string> sup = support_ids, tst = test_ids;
    switch (axis) {
      case AblationAxis::SupportSize: {
        // first k volumes of the shuffled support pool; test side stays fixed
        // so rows are comparable
        int k = 0;
        try {
          k = std::stoi(value);
        } catch (...) {
          fail(Err::InvalidAxisValue, "support_size value '" + value + "'");
        }
        if (k < 1 || size_t(k) > support_ids.size())
          fail(Err::InvalidAxisValue, "support_size " + value + " exceeds the support pool (" +
                                          std::to_string(support_ids.size()) + ")");
        sup.assign(support_ids.begin(), support_ids.begin() + k);
        break;
      }
      case AblationAxis::ExampleCount:
        try {
          cfg.j = std::stoi(value);
        } catch (...) {
          fail(Err::InvalidAxisValue, "example_count value '" + value + "'");
        }
        if (cfg.j < 1) fail(Err::InvalidAxisValue, "example_count must be >= 1");
        break;
      case AblationAxis::Metric:
        cfg.metric = SimilarityMetric::parse(value);
        break;
      case AblationAxis::InitialSlice: {
        json jv;
        try {
          jv = json::parse(value);
        } catch (...) {
          jv = value;
        }
        PipelineConfig tmp = base;
        std::string patched = [&] {
          json j = json::parse(tmp.to_json());
          j["initial_slice"] = jv;
          return j.dump();
        }();
        cfg = PipelineConfig::from_json(patched);
        break;
      }
      case AblationAxis::Consistency:
        if (value == "on") cfg.volumetric_consistency = true;
        else if (value == "off") cfg.volumetric_consistency = false;
        else fail(Err::InvalidAxisValue, "consistency value must be on|off");
        break;
      case AblationAxis::EncoderSize: {
        EncoderSpec preset = EncoderSpec::preset(value);
        preset.weight_seed = base.encoder.weight_seed;
        cfg.encoder = preset;
        break;
      }
    }
    AblationRow row;
    row.axis_value = value;
    row.report = evaluate_split(data, sup, tst, cfg);
    out.push_back(std::move(row));
  }
  return out;
}

std::string report_to_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "axis_value,object_label,mean_dice,std_dice,n_volumes\n";
  os.precision(6);
  os << std::fixed;
  for (const auto& row : rows)
    for (const auto& [label, st] : row.report.per_object)
      os << row.axis_value << "," << label << "," << st.mean << "," << st.stddev << ","
         << st.n_volumes << "\n";
  return os.str();
}

std::string report_to_json(const std::vector<AblationRow>& rows, const PipelineConfig& base,
                           const std::string& axis_label) {
  json j;
  j["axis"] = axis_label;
  j["config"] = json::parse(base.to_json());
  j["config_fingerprint"] = base.fingerprint();
  j["std_convention"] = "across volumes";
  json jrows = json::array();
  for (const auto& row : rows) {
    json jr;
    jr["axis_value"] = row.axis_value;
    jr["overall_mean"] = row.report.overall_mean;
    json per_obj = json::array();
    for (const auto& [label, st] : row.report.per_object) {
      json jo;
      jo["label"] = label;
      jo["mean_dice"] = st.mean;
      jo["std_dice"] = st.stddev;
      jo["n_volumes"] = st.n_volumes;
      per_obj.push_back(jo);
    }
    jr["per_object"] = per_obj;
    json vol_rows = json::array();
    for (const auto& r : row.report.rows) {
      json jv;
      jv["volume"] = r.volume_id;
      jv["label"] = r.label;
      jv["dice"] = r.dice;
      vol_rows.push_back(jv);
    }
    jr["volumes"] = vol_rows;
    jrows.push_back(jr);
  }
  j["rows"] = jrows;
  return j.dump(2);
}

}  // namespace fateseg
