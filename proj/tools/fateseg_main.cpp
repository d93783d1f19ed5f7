// fateseg — few-shot volumetric segmentation engine CLI.
//
// Subcommands: phantom, build-library, segment, eval, ablate.
// Exit codes: 0 ok, 2 bad input, 3 fingerprint mismatch, 4 config parse,
// 5 evaluation mismatch.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fateseg/error.hpp"
#include "fateseg/eval.hpp"
#include "fateseg/parallel.hpp"
#include "fateseg/phantom.hpp"
#include "fateseg/pipeline.hpp"
#include "fateseg/retrieval.hpp"
#include "fateseg/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fateseg;

namespace {

constexpr const char* kEngineVersion = "0.1.0";

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Err::MissingFile, path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(Err::IoFailure, "cannot write " + path);
  out << text;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case Err::FingerprintMismatch: return 3;
    case Err::ConfigParse: return 4;
    case Err::DimMismatch: return 5;
    default: return 2;
  }
}

json checksum_entry(const std::string& path) {
  json j;
  j["path"] = path;
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", (unsigned long long)file_checksum(path));
  j["fnv1a64"] = buf;
  return j;
}

void write_manifest(const std::string& dir, const std::string& command, const json& config_echo,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, const json& extra = json::object()) {
  json m;
  m["engine_version"] = kEngineVersion;
  m["manifest_schema"] = 1;
  m["command"] = command;
  m["config"] = config_echo;
  json jin = json::array();
  for (const auto& p : inputs) jin.push_back(checksum_entry(p));
  m["inputs"] = jin;
  json jout = json::array();
  for (const auto& p : outputs) jout.push_back(checksum_entry(p));
  m["outputs"] = jout;
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  write_text((fs::path(dir) / "manifest.json").string(), m.dump(2) + "\n");
}

EncoderSpec resolve_encoder_arg(const std::string& arg) {
  if (fs::exists(arg)) return EncoderSpec::from_json(read_text(arg));
  if (arg == "patch_mean" || arg.empty()) return EncoderSpec{};
  return EncoderSpec::preset(arg);  // tiny | small | base | large
}

// -------------------------------------------------------------------------
// phantom
// -------------------------------------------------------------------------

int cmd_phantom(const std::string& spec_path, const std::string& out_dir, int n, uint64_t seed,
                int jitter, uint64_t geometry_seed) {
  PhantomSpec base = phantom_spec_from_json(read_text(spec_path));
  fs::create_directories(out_dir);
  PhantomDataset ds = make_phantom_dataset(base, n, jitter, geometry_seed, seed);
  std::vector<std::string> outputs;
  for (int i = 0; i < n; ++i) {
    const std::string img = (fs::path(out_dir) / (ds.ids[i] + ".img.json")).string();
    const std::string lab = (fs::path(out_dir) / (ds.ids[i] + ".lab.json")).string();
    save_volume(ds.images[i], img);
    save_volume(ds.labels[i], lab);
    outputs.push_back(img);
    outputs.push_back(lab);
  }
  json cfg;
  cfg["spec"] = json::parse(phantom_spec_to_json(base));
  cfg["n"] = n;
  cfg["seed"] = seed;
  cfg["jitter"] = jitter;
  cfg["geometry_seed"] = geometry_seed;
  json extra;
  json specs = json::array();
  for (const auto& s : ds.specs) specs.push_back(json::parse(phantom_spec_to_json(s)));
  extra["resolved_specs"] = specs;
  write_manifest(out_dir, "phantom", cfg, {spec_path}, outputs, extra);
  std::cout << "wrote " << n << " phantom volume pairs to " << out_dir << "\n";
  return 0;
}

// -------------------------------------------------------------------------
// build-library
// -------------------------------------------------------------------------

int cmd_build_library(const std::string& support_dir, const std::string& encoder_arg,
                      const std::string& out_path, const std::string& axis_arg,
                      bool l2_normalize, int threads) {
  if (!fs::is_directory(support_dir)) fail(Err::MissingFile, support_dir + " is not a directory");
  std::set<std::string> img_ids, lab_ids;
  for (const auto& entry : fs::directory_iterator(support_dir)) {
    const std::string name = entry.path().filename().string();
    auto strip = [&](const std::string& suffix) -> std::string {
      if (name.size() > suffix.size() &&
          name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
        return name.substr(0, name.size() - suffix.size());
      return {};
    };
    if (std::string id = strip(".img.json"); !id.empty()) img_ids.insert(id);
    if (std::string id = strip(".lab.json"); !id.empty()) lab_ids.insert(id);
  }
  std::vector<std::string> diagnostics;
  for (const auto& id : img_ids)
    if (!lab_ids.count(id)) diagnostics.push_back(id + ".img.json has no paired label volume");
  for (const auto& id : lab_ids)
    if (!img_ids.count(id)) diagnostics.push_back(id + ".lab.json has no paired image volume");
  if (!diagnostics.empty()) {
    for (const auto& d : diagnostics) std::cerr << "error: " << d << "\n";
    return 2;
  }
  if (img_ids.empty()) fail(Err::EmptySupportSet, "no <id>.img.json/<id>.lab.json pairs found");

  EncoderSpec spec = resolve_encoder_arg(encoder_arg);
  SliceAxis axis = parse_axis(axis_arg);
  std::vector<SupportVolume> support;
  std::vector<std::string> inputs;
  for (const auto& id : img_ids) {
    const std::string img = (fs::path(support_dir) / (id + ".img.json")).string();
    const std::string lab = (fs::path(support_dir) / (id + ".lab.json")).string();
    SupportVolume sv;
    sv.id = id;
    try {
      sv.image = load_image_volume(img);
      sv.labels = load_label_volume(lab);
    } catch (const Error& e) {
      std::cerr << "error: " << id << ": " << e.what() << "\n";
      return 2;
    }
    if (sv.image.dims != sv.labels.dims) {
      std::cerr << "error: " << id << ": GeometryMismatch: image dims != label dims\n";
      return 2;
    }
    inputs.push_back(img);
    inputs.push_back(lab);
    support.push_back(std::move(sv));
  }

  SupportLibrary lib = build_library(support, spec, axis, l2_normalize, threads);
  fs::create_directories(fs::path(out_path).parent_path().empty()
                             ? "."
                             : fs::path(out_path).parent_path().string());
  save_library(lib, out_path);

  json cfg;
  cfg["encoder"] = json::parse(spec.to_json());
  cfg["axis"] = axis_arg;
  cfg["l2_normalize"] = l2_normalize;
  char fp[19];
  std::snprintf(fp, sizeof(fp), "0x%016llx", (unsigned long long)lib.fingerprint);
  cfg["fingerprint"] = fp;
  const std::string dir = fs::path(out_path).parent_path().string().empty()
                              ? "."
                              : fs::path(out_path).parent_path().string();
  write_manifest(dir, "build-library", cfg, inputs, {out_path});
  std::cout << "library: " << lib.entries.size() << " entries, "
            << lib.object_labels.size() << " objects -> " << out_path << "\n";
  return 0;
}

// -------------------------------------------------------------------------
// segment
// -------------------------------------------------------------------------

int cmd_segment(const std::string& test_path, const std::string& lib_path,
                const std::string& config_path, const std::string& out_dir, bool want_logits,
                bool no_volumetric, int threads) {
  PipelineConfig cfg =
      config_path.empty() ? PipelineConfig{} : PipelineConfig::from_json(read_text(config_path));
  if (no_volumetric) cfg.volumetric_consistency = false;
  if (threads > 0) cfg.threads = threads;

  Volume test = load_image_volume(test_path);
  SupportLibrary lib = load_library(lib_path);
  if (lib.fingerprint != cfg.encoder.fingerprint())
    fail(Err::FingerprintMismatch,
         "library encoder spec differs from config (library: " + lib.encoder_spec_json + ")");
  if (lib.l2_normalized != cfg.l2_normalize_embeddings)
    fail(Err::FingerprintMismatch, "library l2 normalization differs from config");

  SegmentationResult res = segment_volume(test, lib, cfg, want_logits);

  fs::create_directories(out_dir);
  const std::string mask_path = (fs::path(out_dir) / "mask.lab.json").string();
  save_volume(res.labels, mask_path);
  std::vector<std::string> outputs{mask_path,
                                   (fs::path(out_dir) / "mask.lab.raw").string()};
  if (want_logits) {
    for (const auto& [label, logits] : res.per_object_logits) {
      Volume lv;
      lv.dims = test.dims;
      lv.spacing = test.spacing;
      lv.data = logits;
      const std::string p =
          (fs::path(out_dir) / ("logits_" + std::to_string(label) + ".img.json")).string();
      save_volume(lv, p);
      outputs.push_back(p);
    }
  }
  const std::string trace_path = (fs::path(out_dir) / "trace.json").string();
  write_text(trace_path, trace_to_json(res.trace, cfg) + "\n");
  outputs.push_back(trace_path);

  write_manifest(out_dir, "segment", json::parse(cfg.to_json()), {test_path, lib_path}, outputs);
  std::cout << "segmented " << test_path << " -> " << mask_path << "\n";
  return 0;
}

// -------------------------------------------------------------------------
// eval
// -------------------------------------------------------------------------

int cmd_eval(const std::string& pred_path, const std::string& truth_path,
             const std::string& out_dir) {
  LabelVolume pred = load_label_volume(pred_path);
  LabelVolume truth = load_label_volume(truth_path);
  if (pred.dims != truth.dims) fail(Err::DimMismatch, "prediction dims != truth dims");

  std::set<uint16_t> labels;
  for (uint16_t l : truth.label_set()) labels.insert(l);
  for (uint16_t l : pred.label_set()) labels.insert(l);

  std::vector<DiceRow> rows;
  for (uint16_t l : labels) rows.push_back({pred_path, l, dice_label(pred, truth, l)});
  DiceReport report = DiceReport::from_rows(rows);

  fs::create_directories(out_dir);
  std::ostringstream csv;
  csv << "object_label,dice\n";
  csv.precision(6);
  csv << std::fixed;
  for (const auto& r : report.rows) csv << r.label << "," << r.dice << "\n";
  const std::string csv_path = (fs::path(out_dir) / "dice.csv").string();
  write_text(csv_path, csv.str());

  json j;
  j["dice_convention"] = "both-empty masks score 1.0";
  json jr = json::array();
  for (const auto& r : report.rows) {
    json row;
    row["label"] = r.label;
    row["dice"] = r.dice;
    jr.push_back(row);
  }
  j["per_object"] = jr;
  j["overall_mean"] = report.overall_mean;
  const std::string json_path = (fs::path(out_dir) / "dice.json").string();
  write_text(json_path, j.dump(2) + "\n");

  write_manifest(out_dir, "eval", json::object(), {pred_path, truth_path}, {csv_path, json_path});
  std::cout << csv.str();
  return 0;
}

// -------------------------------------------------------------------------
// ablate
// -------------------------------------------------------------------------

EvalDataset load_dataset_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) fail(Err::MissingFile, dir + " is not a directory");
  std::set<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = ".img.json";
    if (name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      ids.insert(name.substr(0, name.size() - suffix.size()));
  }
  if (ids.size() < 2) fail(Err::TooFewVolumes, "dataset needs at least 2 volume pairs");
  EvalDataset ds;
  for (const auto& id : ids) {
    ds.ids.push_back(id);
    ds.images.push_back(load_image_volume((fs::path(dir) / (id + ".img.json")).string()));
    ds.labels.push_back(load_label_volume((fs::path(dir) / (id + ".lab.json")).string()));
  }
  return ds;
}

int cmd_ablate(const std::string& axis_arg, const std::string& values_csv,
               const std::string& dataset_dir, const std::string& config_path,
               const std::string& out_dir, double support_fraction, uint64_t split_seed,
               int threads) {
  AblationAxis axis = parse_ablation_axis(axis_arg);
  std::vector<std::string> values;
  std::stringstream ss(values_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) values.push_back(tok);
  }
  if (values.empty()) fail(Err::InvalidAxisValue, "no --values given");

  PipelineConfig base =
      config_path.empty() ? PipelineConfig{} : PipelineConfig::from_json(read_text(config_path));
  if (threads > 0) base.threads = threads;
  EvalDataset data = load_dataset_dir(dataset_dir);

  std::vector<AblationRow> rows =
      run_ablation(axis, values, base, data, support_fraction, split_seed);

  fs::create_directories(out_dir);
  const std::string csv_path = (fs::path(out_dir) / "ablation.csv").string();
  const std::string json_path = (fs::path(out_dir) / "ablation.json").string();
  write_text(csv_path, report_to_csv(rows));
  write_text(json_path, report_to_json(rows, base, axis_arg) + "\n");

  json cfg = json::parse(base.to_json());
  cfg["ablation_axis"] = axis_arg;
  cfg["ablation_values"] = values;
  cfg["support_fraction"] = support_fraction;
  cfg["split_seed"] = split_seed;
  std::vector<std::string> inputs;
  if (!config_path.empty()) inputs.push_back(config_path);
  write_manifest(out_dir, "ablate", cfg, inputs, {csv_path, json_path});
  std::cout << report_to_csv(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fateseg: training-free few-shot 3D segmentation engine"};
  app.require_subcommand(1);

  // phantom
  auto* ph = app.add_subcommand("phantom", "generate a synthetic phantom dataset");
  std::string ph_spec, ph_out;
  int ph_n = 1, ph_jitter = 0;
  uint64_t ph_seed = 0, ph_geo_seed = 0;
  ph->add_option("--spec", ph_spec, "phantom spec JSON")->required();
  ph->add_option("--out", ph_out, "output directory")->required();
  ph->add_option("--n", ph_n, "number of volumes");
  ph->add_option("--seed", ph_seed, "noise seed base");
  ph->add_option("--jitter", ph_jitter, "max per-axis center jitter (voxels)");
  ph->add_option("--geometry-seed", ph_geo_seed, "jitter stream seed");

  // build-library
  auto* bl = app.add_subcommand("build-library", "encode support volumes into a library");
  std::string bl_dir, bl_encoder = "patch_mean", bl_out, bl_axis = "z";
  bool bl_l2 = false;
  int bl_threads = 0;
  bl->add_option("--support", bl_dir, "directory of <id>.img.json/<id>.lab.json pairs")->required();
  bl->add_option("--encoder", bl_encoder, "encoder spec JSON path, 'patch_mean', or a toyvit preset");
  bl->add_option("--out", bl_out, "library output path")->required();
  bl->add_option("--axis", bl_axis, "slice axis (x|y|z)");
  bl->add_flag("--l2-normalize", bl_l2, "L2-normalize stored embeddings");
  bl->add_option("--threads", bl_threads, "worker threads (0 = auto)");

  // segment
  auto* sg = app.add_subcommand("segment", "segment a test volume");
  std::string sg_test, sg_lib, sg_cfg, sg_out;
  bool sg_logits = false, sg_novol = false;
  int sg_threads = 0;
  sg->add_option("--test", sg_test, "test volume (.img.json)")->required();
  sg->add_option("--library", sg_lib, "support library file")->required();
  sg->add_option("--config", sg_cfg, "pipeline config JSON (defaults when omitted)");
  sg->add_option("--out", sg_out, "output directory")->required();
  sg->add_flag("--logits", sg_logits, "also write per-object logit volumes");
  sg->add_flag("--no-volumetric-consistency", sg_novol, "disable volumetric memory");
  sg->add_option("--threads", sg_threads, "worker threads (0 = auto)");

  // eval
  auto* ev = app.add_subcommand("eval", "Dice a prediction against ground truth");
  std::string ev_pred, ev_truth, ev_out;
  ev->add_option("--pred", ev_pred, "predicted label volume")->required();
  ev->add_option("--truth", ev_truth, "ground-truth label volume")->required();
  ev->add_option("--out", ev_out, "output directory")->required();

  // ablate
  auto* ab = app.add_subcommand("ablate", "sweep one config axis and report Dice");
  std::string ab_axis, ab_values, ab_dataset, ab_cfg, ab_out;
  double ab_fraction = 0.1;
  uint64_t ab_seed = 0;
  int ab_threads = 0;
  ab->add_option("--axis", ab_axis,
                 "support_size|example_count|metric|initial_slice|consistency|encoder_size")
      ->required();
  ab->add_option("--values", ab_values, "comma-separated grid values")->required();
  ab->add_option("--dataset", ab_dataset, "directory of volume pairs")->required();
  ab->add_option("--config", ab_cfg, "base pipeline config JSON");
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_option("--support-fraction", ab_fraction, "support split fraction");
  ab->add_option("--split-seed", ab_seed, "split shuffle seed");
  ab->add_option("--threads", ab_threads, "worker threads (0 = auto)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ph) return cmd_phantom(ph_spec, ph_out, ph_n, ph_seed, ph_jitter, ph_geo_seed);
    if (*bl) return cmd_build_library(bl_dir, bl_encoder, bl_out, bl_axis, bl_l2, bl_threads);
    if (*sg) return cmd_segment(sg_test, sg_lib, sg_cfg, sg_out, sg_logits, sg_novol, sg_threads);
    if (*ev) return cmd_eval(ev_pred, ev_truth, ev_out);
    if (*ab)
      return cmd_ablate(ab_axis, ab_values, ab_dataset, ab_cfg, ab_out, ab_fraction, ab_seed,
                        ab_threads);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
