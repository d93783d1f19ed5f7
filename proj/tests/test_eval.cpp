#include <doctest.h>

#include <set>

#include "fateseg/error.hpp"
#include "fateseg/eval.hpp"
#include "fateseg/phantom.hpp"
#include "test_util.hpp"

using namespace fateseg;

namespace {

EvalDataset mini_dataset(int n) {
  PhantomSpec spec;
  spec.dims = {32, 32, 8};
  spec.background = 0.0f;
  spec.noise_sigma = 0.05;
  spec.block_align = 4;
  PhantomObject o;
  o.shape = PhantomShape::Sphere;
  o.label = 1;
  o.intensity = 1.0f;
  o.center = {16, 16, 4};
  o.radius = 10;
  spec.objects = {o};
  PhantomDataset ds = make_phantom_dataset(spec, n, 1, 9, 90);
  EvalDataset out;
  out.ids = ds.ids;
  out.images = std::move(ds.images);
  out.labels = std::move(ds.labels);
  return out;
}

PipelineConfig mini_config() {
  PipelineConfig cfg;
  cfg.encoder.input_size = 32;
  cfg.encoder.patch = 4;
  cfg.decoder.patch = 4;
  cfg.j = 1;
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST_CASE("dice: identity, disjoint, and the 100/100/50 case") {
  std::vector<uint8_t> a(200, 0), b(200, 0);
  for (int i = 0; i < 100; ++i) a[i] = 1;
  CHECK(dice(a, a) == 1.0);
  for (int i = 100; i < 200; ++i) b[i] = 1;
  CHECK(dice(a, b) == 0.0);
  std::vector<uint8_t> c(200, 0);
  for (int i = 50; i < 150; ++i) c[i] = 1;  // |C|=100, overlap with a = 50
  CHECK(dice(a, c) == 0.5);
}

TEST_CASE("dice: both-empty convention and symmetry") {
  std::vector<uint8_t> e1(64, 0), e2(64, 0);
  CHECK(dice(e1, e2) == 1.0);
  CHECK(dice(e1, e1) == 1.0);
  std::mt19937 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<uint8_t> a(64), b(64);
    for (auto& x : a) x = rng() & 1;
    for (auto& x : b) x = rng() & 1;
    CHECK(dice(a, b) == dice(b, a));  // exact symmetry
    CHECK(dice(a, b) >= 0.0);
    CHECK(dice(a, b) <= 1.0);
  }
}

TEST_CASE("dice: length mismatch throws") {
  std::vector<uint8_t> a(10, 0), b(11, 0);
  CHECK_THROWS_AS(dice(a, b), Error);
  LabelVolume p, q;
  p.dims = {2, 2, 2};
  p.labels.assign(8, 0);
  q.dims = {2, 2, 1};
  q.labels.assign(4, 0);
  CHECK_THROWS_AS(dice_label(p, q, 1), Error);
}

TEST_CASE("split_support_test: sizes, clamping, determinism") {
  std::vector<std::string> ids;
  for (int i = 0; i < 100; ++i) ids.push_back("v" + std::to_string(i));
  std::vector<std::string> sup, tst;
  split_support_test(ids, 0.10, 0, sup, tst);
  CHECK(sup.size() == 10);
  CHECK(tst.size() == 90);
  // disjoint and exhaustive
  std::set<std::string> all(sup.begin(), sup.end());
  for (const auto& id : tst) CHECK(all.insert(id).second);
  CHECK(all.size() == 100);

  std::vector<std::string> ten(ids.begin(), ids.begin() + 10);
  split_support_test(ten, 0.10, 0, sup, tst);
  CHECK(sup.size() == 1);  // minimum clamp
  CHECK(tst.size() == 9);

  std::vector<std::string> s1, t1, s2, t2, s3, t3;
  split_support_test(ids, 0.2, 7, s1, t1);
  split_support_test(ids, 0.2, 7, s2, t2);
  split_support_test(ids, 0.2, 8, s3, t3);
  CHECK(s1 == s2);
  CHECK(t1 == t2);
  CHECK(s1 != s3);

  std::vector<std::string> one = {"only"};
  CHECK_THROWS_AS(split_support_test(one, 0.5, 0, sup, tst), Error);
  CHECK_THROWS_AS(split_support_test(ids, 0.0, 0, sup, tst), Error);
  CHECK_THROWS_AS(split_support_test(ids, 1.0, 0, sup, tst), Error);
}

TEST_CASE("ablation: CS and PCC rows coincide on mean-centered embeddings") {
  // PatchMean tokens are z-normalized per token, so the flattened embedding is
  // mean-centered and PCC reduces to CS; retrieval rankings then coincide.
  EvalDataset data = mini_dataset(4);
  PipelineConfig cfg = mini_config();
  auto rows = run_ablation(AblationAxis::Metric, {"CS", "PCC"}, cfg, data, 0.25, 0);
  REQUIRE(rows.size() == 2);
  REQUIRE(rows[0].report.rows.size() == rows[1].report.rows.size());
  for (size_t i = 0; i < rows[0].report.rows.size(); ++i) {
    CHECK(rows[0].report.rows[i].volume_id == rows[1].report.rows[i].volume_id);
    CHECK(rows[0].report.rows[i].dice == rows[1].report.rows[i].dice);
  }
}

TEST_CASE("ablation: consistency axis has two rows; reruns are bit-identical") {
  EvalDataset data = mini_dataset(3);
  PipelineConfig cfg = mini_config();
  auto rows = run_ablation(AblationAxis::Consistency, {"off", "on"}, cfg, data, 0.34, 1);
  REQUIRE(rows.size() == 2);
  auto again = run_ablation(AblationAxis::Consistency, {"off", "on"}, cfg, data, 0.34, 1);
  CHECK(report_to_csv(rows) == report_to_csv(again));
  CHECK(report_to_json(rows, cfg, "consistency") == report_to_json(again, cfg, "consistency"));
}

TEST_CASE("ablation: example-count sweep produces one row per j") {
  EvalDataset data = mini_dataset(4);
  PipelineConfig cfg = mini_config();
  auto rows = run_ablation(AblationAxis::ExampleCount, {"1", "2", "3"}, cfg, data, 0.5, 2);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) CHECK(r.report.per_object.count(1) == 1);
  CHECK_THROWS_AS(run_ablation(AblationAxis::ExampleCount, {"x"}, cfg, data, 0.5, 2), Error);
}

TEST_CASE("ablation: support-size axis grows the support pool") {
  EvalDataset data = mini_dataset(5);
  PipelineConfig cfg = mini_config();
  auto rows = run_ablation(AblationAxis::SupportSize, {"1", "2"}, cfg, data, 0.5, 3);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].report.rows.size() == rows[1].report.rows.size());
  CHECK_THROWS_AS(run_ablation(AblationAxis::SupportSize, {"9"}, cfg, data, 0.5, 3), Error);
}

TEST_CASE("ablation: initial-slice and encoder-size axes accept their value sets") {
  EvalDataset data = mini_dataset(3);
  PipelineConfig cfg = mini_config();
  auto rows =
      run_ablation(AblationAxis::InitialSlice, {"first", "center", "q3"}, cfg, data, 0.34, 4);
  CHECK(rows.size() == 3);
  CHECK_THROWS_AS(run_ablation(AblationAxis::InitialSlice, {"middle"}, cfg, data, 0.34, 4),
                  Error);
  // encoder presets rebuild the library per row at matching channel counts
  auto enc_rows = run_ablation(AblationAxis::EncoderSize, {"tiny", "small"}, cfg, data, 0.34, 4);
  CHECK(enc_rows.size() == 2);
}

TEST_CASE("report CSV has the pinned column layout") {
  EvalDataset data = mini_dataset(3);
  PipelineConfig cfg = mini_config();
  auto rows = run_ablation(AblationAxis::Metric, {"CS"}, cfg, data, 0.34, 0);
  std::string csv = report_to_csv(rows);
  CHECK(csv.rfind("axis_value,object_label,mean_dice,std_dice,n_volumes\n", 0) == 0);
  CHECK(csv.find("CS,1,") != std::string::npos);
  std::string js = report_to_json(rows, cfg, "metric");
  CHECK(js.find("\"std_convention\": \"across volumes\"") != std::string::npos);
  CHECK(js.find("config_fingerprint") != std::string::npos);
}

TEST_CASE("parsing helpers: ablation axis names") {
  CHECK(parse_ablation_axis("metric") == AblationAxis::Metric);
  CHECK(parse_ablation_axis("support_size") == AblationAxis::SupportSize);
  CHECK_THROWS_AS(parse_ablation_axis("bogus"), Error);
}
