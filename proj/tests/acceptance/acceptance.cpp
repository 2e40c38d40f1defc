// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Thresholds here are the contract; do not loosen them to
// make a run pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mmv/cli/commands.hpp"
#include "mmv/cli/gradcheck_suite.hpp"
#include "mmv/cli/report.hpp"
#include "mmv/dataset/io.hpp"
#include "mmv/diffcore/ops.hpp"
#include "mmv/dataset/split.hpp"
#include "mmv/dataset/transforms.hpp"
#include "mmv/metrics/metrics.hpp"
#include "mmv/model/model.hpp"
#include "mmv/synth/synth.hpp"
#include "mmv/train/examples.hpp"
#include "mmv/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace mmv;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mmv_accept_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run_command(args, out, err);
  if (code != 0) std::cerr << "  mmv " << args.front() << " failed (" << code << "): " << err.str();
  return code;
}

model::ModelConfig toy_model() {
  model::ModelConfig c;
  c.frame_size = 16;
  c.patch = 8;
  c.spatial_dim = 8;
  c.spatial_layers = 1;
  c.spatial_heads = 2;
  c.dim = 8;
  c.layers = 1;
  c.heads = 2;
  c.ehr_width = 3;
  c.interp_width = 2;
  c.max_frames = 2;
  c.seed = 3;
  return c;
}

model::ModelInput toy_input(const model::ModelConfig& c, std::size_t frames, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::normal_distribution<double> nd(0.0, 1.0);
  model::ModelInput in;
  auto& f = in.frames;
  f.frames = frames;
  const std::size_t plane = c.frame_size * c.frame_size;
  f.video.resize(frames * plane);
  for (auto& v : f.video) v = u(rng);
  f.zona.assign(frames * plane * c.zona_classes, 0.0f);
  for (std::size_t p = 0; p < frames * plane; ++p) f.zona[p * c.zona_classes + rng() % c.zona_classes] = 1.0f;
  f.blast.resize(frames * plane * 2);
  f.pronuc.resize(frames * plane * 2);
  for (auto& v : f.blast) v = static_cast<float>(rng() % 2);
  for (auto& v : f.pronuc) v = static_cast<float>(rng() % 2);
  for (std::size_t t = 0; t < frames; ++t) {
    f.frag.push_back(u(rng));
    f.stage.push_back(static_cast<std::uint8_t>(rng() % c.stage_classes));
  }
  for (std::size_t i = 0; i < c.ehr_width; ++i) in.ehr.push_back(nd(rng));
  for (std::size_t i = 0; i < c.interp_width; ++i) in.interp.push_back(nd(rng));
  return in;
}

data::TreatmentCycle fixture_cycle(const std::string& id, int births,
                                   std::vector<std::pair<std::string, bool>> embryos) {
  data::TreatmentCycle c;
  c.treatment_id = id;
  for (auto& [eid, transferred] : embryos) {
    data::EmbryoSample e;
    e.embryo_id = eid;
    e.transferred = transferred;
    c.embryos.push_back(e);
    c.n_transferred += transferred ? 1 : 0;
  }
  c.n_births = births;
  data::assign_labels(c);
  return c;
}

// 1. Gradient integrity.
Outcome gradient_integrity() {
  const auto t0 = Clock::now();
  const auto entries = cli::run_gradcheck_suite();
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  bool has_model = false, has_tabular = false;
  for (const auto& e : entries) {
    if (e.max_relative_error > worst || std::isnan(e.max_relative_error)) {
      worst = e.max_relative_error;
      worst_name = e.name;
    }
    has_model |= e.name == "multimodal forward";
    has_tabular |= e.name == "tabular forward";
  }
  const bool pass = has_model && has_tabular && worst < 1e-4 && secs < 120.0;
  return {pass, std::to_string(entries.size()) + " checks, max rel err " + fmt("%.2e", worst) + " (" + worst_name +
                    "), " + fmt("%.1f", secs) + " s"};
}

// 2. Metric oracle equivalence.
Outcome metric_oracles() {
  std::mt19937_64 rng(1);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 199;
    std::vector<double> s(n);
    std::vector<int> y(n);
    const int levels = 1 + static_cast<int>(rng() % 20);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % static_cast<unsigned>(levels)) / levels;
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 1;
    y[1] = 0;
    double num = 0, den = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (y[i] == 1 && y[j] == 0) {
          den += 1;
          num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    mismatches += metrics::auc_roc(s, y) != num / den;
  }

  const std::vector<data::TreatmentCycle> embryo_fixture = {
      fixture_cycle("T1", 1, {{"E1", true}, {"E2", true}}),
      fixture_cycle("T2", 0, {{"E3", true}, {"E4", false}}),
      fixture_cycle("T3", 0, {{"E5", true}, {"E6", true}}),
      fixture_cycle("T4", 1, {{"E7", true}}),
  };
  const metrics::Predictions ep = {{"E1", 0.9}, {"E2", 0.3}, {"E3", 0.4}, {"E4", 0.99},
                                   {"E5", 0.1}, {"E6", 0.05}, {"E7", 0.2}};
  const auto e = metrics::evaluate_embryo(ep, embryo_fixture);
  const bool embryo_ok = e.auc == 7.0 / 9.0 && e.f1 == 6.0 / 7.0 && e.count == 6;

  const std::vector<data::TreatmentCycle> treatment_fixture = {
      fixture_cycle("A", 1, {{"a1", true}, {"a2", true}}), fixture_cycle("B", 0, {{"b1", true}, {"b2", true}}),
      fixture_cycle("C", 1, {{"c1", true}, {"c2", false}}), fixture_cycle("D", 0, {{"d1", true}}),
      fixture_cycle("E", 0, {{"e1", true}, {"e2", true}}),
  };
  const metrics::Predictions tp = {{"a1", 0.3}, {"a2", 0.4}, {"b1", 1.5},  {"b2", -0.2}, {"c1", 0.45},
                                   {"c2", 0.9}, {"d1", 0.2}, {"e1", 0.05}, {"e2", 0.1}};
  const auto t = metrics::evaluate_treatment(tp, treatment_fixture);
  const bool treatment_ok = t.auc == 4.0 / 6.0 && t.f1 == 0.5 && t.count == 5;

  return {mismatches == 0 && embryo_ok && treatment_ok,
          std::to_string(1000 - mismatches) + "/1000 exact oracle matches; embryo fixture AUC " + fmt("%.4f", e.auc) +
              " F1 " + fmt("%.4f", e.f1) + "; treatment fixture AUC " + fmt("%.4f", t.auc) + " F1 " +
              fmt("%.4f", t.f1)};
}

// 3. Pipeline constants.
Outcome pipeline_constants() {
  std::vector<std::size_t> expect;
  for (std::size_t i = 0; i <= 356; i += 4) expect.push_back(i);
  const auto idx = data::subsample_indices(360);
  const bool frames_ok = idx == expect && idx.size() == 90;

  model::ModelConfig mc;
  mc.ehr_width = 5;
  mc.interp_width = 6;
  const bool seq_ok = mc.sequence_length() == mc.max_frames + 3;
  const bool depth_ok = mc.layers == 4;

  const train::TrainConfig tc;
  // The trainer's loss is Huber: compare against a hand evaluation.
  const auto pred = diff::Tensor<double>::from({2, 1}, {0.5, 3.0});
  const auto target = diff::Tensor<double>::from({2, 1}, {0.0, 0.0});
  const double huber = diff::huber_loss(pred, target, tc.huber_delta).item();
  const double hand = (0.5 * 0.25 + (3.0 - 0.5)) / 2.0;
  const bool train_ok = tc.batch_size == 4 && tc.learning_rate == 1e-4 && tc.huber_delta == 1.0 && huber == hand;

  return {frames_ok && seq_ok && depth_ok && train_ok,
          "subsample " + std::to_string(idx.size()) + " frames (0.." + std::to_string(idx.back()) +
              " step 4), sequence " + std::to_string(mc.sequence_length()) + " = F+3, depth " +
              std::to_string(mc.layers) + ", batch " + std::to_string(tc.batch_size) + ", lr " +
              fmt("%g", tc.learning_rate) + ", Huber delta " + fmt("%g", tc.huber_delta)};
}

// 4. Split contract.
Outcome split_contract() {
  std::vector<data::TreatmentCycle> cycles;
  std::mt19937_64 rng(17);
  std::vector<int> success(1700, 0);
  std::fill(success.begin(), success.begin() + 260, 1);
  std::shuffle(success.begin(), success.end(), rng);
  for (std::size_t i = 0; i < 1700; ++i) {
    std::vector<std::pair<std::string, bool>> embryos;
    const std::size_t n = 1 + rng() % 4;
    for (std::size_t e = 0; e < n; ++e) embryos.push_back({"T" + std::to_string(i) + "_E" + std::to_string(e), e == 0});
    cycles.push_back(fixture_cycle("T" + std::to_string(i), success[i], embryos));
  }
  const auto s = data::stratified_split(cycles, {8, 1, 1}, 0);
  std::array<std::size_t, 3> total{}, succ{};
  std::map<std::string, int> owner;
  bool disjoint = true;
  for (int p = 0; p < 3; ++p)
    for (std::size_t ci : s.of(static_cast<data::Split>(p))) {
      ++total[p];
      succ[p] += cycles[ci].success();
      for (const auto& e : cycles[ci].embryos) {
        const auto [it, fresh] = owner.emplace(e.embryo_id, p);
        disjoint &= fresh || it->second == p;
      }
    }
  std::size_t embryos = 0;
  for (const auto& c : cycles) embryos += c.embryos.size();
  disjoint &= owner.size() == embryos;
  const bool pass = total == std::array<std::size_t, 3>{1360, 170, 170} &&
                    succ == std::array<std::size_t, 3>{208, 26, 26} && disjoint;
  return {pass, "treatments " + std::to_string(total[0]) + "/" + std::to_string(total[1]) + "/" +
                    std::to_string(total[2]) + ", successes " + std::to_string(succ[0]) + "/" +
                    std::to_string(succ[1]) + "/" + std::to_string(succ[2]) +
                    (disjoint ? ", no treatment straddles partitions" : ", embryos leak across partitions")};
}

// 5. Planted-signal learnability.
constexpr std::uint64_t kLearnSeeds[] = {1, 2, 3, 4, 5};
constexpr double kLearnRate = 1e-4;

Outcome learnability() {
  const auto t0 = Clock::now();
  const auto root = scratch("learn");
  const std::vector<std::string> modalities = {"v'+e+e'", "v", "v+v'", "e", "e+e'"};
  std::map<std::string, std::vector<double>> auc;
  for (std::uint64_t seed : kLearnSeeds) {
    cli::RunConfig rc;
    rc.synth.n_treatments = 300;
    rc.synth.frame_size = 32;
    rc.synth.frames = 120;
    rc.synth.w_video = 0.3;
    rc.synth.w_ehr = 0.3;
    rc.synth.w_morph = 0.4;
    rc.synth.seed = seed;
    rc.model.max_frames = 30;
    rc.model.freeze_spatial = true;
    rc.train.augment = false;
    rc.train.learning_rate = kLearnRate;
    rc.train.max_epochs = 60;
    rc.seed = seed;
    rc.split_seed = seed;
    rc.eval_split = "test";
    rc.data_dir = root / ("data_" + std::to_string(seed));
    const auto dataset = synth::generate_corpus(rc.synth).dataset;
    for (const auto& m : modalities) {
      rc.modality = m;
      const fs::path out = root / ("run_" + std::to_string(seed) + "_" + std::to_string(auc[m].size()) +
                                   std::to_string(&m - modalities.data()));
      cli::train_run(rc, dataset, out);
      auc[m].push_back(cli::eval_run(rc, dataset, out / cli::kCheckpointFile, out).embryo.auc);
    }
  }
  const double secs = seconds_since(t0);
  auto mean = [&](const std::string& m) { return cli::mean_sd(auc[m]).mean; };
  const bool a = mean("v'+e+e'") >= 0.70;
  const bool b = mean("v+v'") - mean("v") >= 0.05;
  const bool c = mean("e+e'") - mean("e") >= 0.03;
  const bool time_ok = secs <= 20 * 60;
  std::string detail = "(a) v'+e+e' " + fmt("%.3f", mean("v'+e+e'")) + (a ? " >= 0.70" : " < 0.70") +
                       "; (b) v+v' " + fmt("%.3f", mean("v+v'")) + " vs v " + fmt("%.3f", mean("v")) +
                       (b ? " gap >= 0.05" : " gap < 0.05") + "; (c) e+e' " + fmt("%.3f", mean("e+e'")) + " vs e " +
                       fmt("%.3f", mean("e")) + (c ? " gap >= 0.03" : " gap < 0.03") + "; " +
                       std::to_string(std::size(kLearnSeeds)) + " seeds, " + fmt("%.0f", secs) + " s";
  fs::remove_all(root);
  return {a && b && c && time_ok, detail};
}

// 6. Masked-padding invariance.
Outcome padding_invariance() {
  model::ModelConfig c = toy_model();
  c.max_frames = 90;
  c.layers = 2;
  const model::Model<double> m(c);
  std::mt19937_64 rng(9);
  const auto in = toy_input(c, 7, rng);
  const model::ModelInput* batch[] = {&in};
  const diff::Tensor<double> ft[] = {m.fuse_frame_tokens(m.encode_visual(in.frames), in.frames)};
  const auto seq = m.build_sequence(ft, batch);
  const double base = m.temporal_forward(seq).item();
  if (base != m.score(in)) return {false, "sequence path disagrees with score()"};
  std::vector<double> tokens(seq.tokens.data().begin(), seq.tokens.data().end());
  std::normal_distribution<double> nd(0.0, 100.0);
  double max_change = 0.0;
  std::size_t padded = 0;
  for (std::size_t r = 0; r < seq.length; ++r) padded += !seq.mask[r];
  for (int fill = 0; fill < 1000; ++fill) {
    for (std::size_t r = 0; r < seq.length; ++r)
      if (!seq.mask[r])
        for (std::size_t k = 0; k < c.dim; ++k) tokens[r * c.dim + k] = nd(rng);
    auto s = seq;
    s.tokens = diff::Tensor<double>::from(seq.tokens.shape(), tokens);
    max_change = std::max(max_change, std::abs(m.temporal_forward(s).item() - base));
  }
  return {max_change == 0.0 && padded == c.max_frames - 7,
          "7 of " + std::to_string(c.max_frames) + " frames, " + std::to_string(padded) +
              " padded slots, 1000 fills, max score change " + fmt("%g", max_change)};
}

std::string small_pipeline_config(const fs::path& dir, const std::string& modality) {
  const fs::path file = dir / "run.yaml";
  std::ofstream(file) << "synth:\n  n_treatments: 30\n  frames: 24\n  frame_size: 16\n  zona_width: 1\n  seed: 5\n"
                         "model:\n  patch: 8\n  spatial_dim: 8\n  dim: 16\n  layers: 2\n  heads: 2\n  max_frames: 6\n"
                         "train:\n  max_epochs: 3\n  learning_rate: 0.001\n"
                         "paths:\n  data: data\n  out: out\n"
                         "run:\n  modality: \""
                      << modality << "\"\n  seed: 2\n";
  return file.string();
}

// 7. Determinism.
Outcome determinism() {
  const auto dir = scratch("determinism");
  setenv("MMV_THREADS", "1", 1);
  const auto cfg = small_pipeline_config(dir, "v+v'+e+e'");
  bool ok = cli({"gen", "--config", cfg}) == 0;
  for (const char* run : {"a", "b"}) {
    ok &= cli({"train", "--config", cfg, "--out", (dir / run).string()}) == 0;
    ok &= cli({"eval", "--config", cfg, "--out", (dir / run).string()}) == 0;
  }
  unsetenv("MMV_THREADS");
  if (!ok) return {false, "a command failed"};
  const bool ckpt = slurp(dir / "a" / "model.ckpt") == slurp(dir / "b" / "model.ckpt");
  const bool met = slurp(dir / "a" / "metrics.json") == slurp(dir / "b" / "metrics.json");
  const std::size_t bytes = fs::file_size(dir / "a" / "model.ckpt");
  fs::remove_all(dir);
  return {ckpt && met, std::string("checkpoints (") + std::to_string(bytes) + " bytes) " +
                           (ckpt ? "identical" : "differ") + ", metrics.json " + (met ? "identical" : "differ") +
                           " (augmentation on, MMV_THREADS=1)"};
}

// 8. Overfit sanity.
Outcome overfit() {
  auto c = toy_model();
  model::Model<float> m(c);
  std::mt19937_64 rng(21);
  std::vector<train::Example> batch(4);
  std::vector<model::ModelInput> inputs;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    inputs.push_back(toy_input(c, 1 + i % 2, rng));
    batch[i].target = i % 2 == 0 ? 1.0 : 0.0;
    batch[i].embryo_id = std::to_string(i);
  }
  const train::InputFn fn = [&](const train::Example& e, std::mt19937_64*) {
    return inputs[static_cast<std::size_t>(std::stoi(e.embryo_id))];
  };
  train::TrainConfig tc;
  tc.learning_rate = 3e-3;
  const auto losses = train::fit_batch(m, fn, batch, 200, tc);
  const double ratio = losses.back() / losses.front();
  return {losses.size() == 200 && ratio < 0.1, "loss " + fmt("%.4g", losses.front()) + " -> " +
                                                   fmt("%.4g", losses.back()) + " after 200 steps (ratio " +
                                                   fmt("%.4f", ratio) + ")"};
}

// 9. End-to-end smoke with default model and training settings.
Outcome smoke() {
  const auto t0 = Clock::now();
  const auto dir = scratch("smoke");
  const fs::path cfg = dir / "run.yaml";
  std::ofstream(cfg) << "paths:\n  data: data\n  out: out\n";
  const std::string c = cfg.string();
  bool ok = cli({"gen", "--config", c}) == 0;
  ok = ok && cli({"train", "--config", c}) == 0;
  ok = ok && cli({"eval", "--config", c}) == 0;
  ok = ok && cli({"predict", "--config", c, "--split", "all"}) == 0;
  const double secs = seconds_since(t0);
  if (!ok) return {false, "a command exited nonzero"};

  std::vector<std::string> problems;
  const fs::path out = dir / "out";
  if (slurp(out / "model.ckpt").substr(0, 5) != "MMVC1") problems.push_back("checkpoint magic");
  if (slurp(out / "history.csv").rfind("epoch,train_loss,val_loss,seconds\n", 0) != 0) problems.push_back("history");
  try {
    const auto j = nlohmann::json::parse(slurp(out / "metrics.json"));
    for (const char* k : {"embryo_auc", "embryo_f1", "treatment_auc", "treatment_f1"}) {
      const double v = j.at(k).get<double>();
      if (!(v >= 0.0 && v <= 1.0)) problems.push_back(k);
    }
    if (j.at("n_embryos").get<int>() <= 0 || j.at("n_treatments").get<int>() <= 0) problems.push_back("counts");
  } catch (const std::exception& e) {
    problems.push_back(std::string("metrics.json: ") + e.what());
  }
  if (slurp(out / "roc.csv").rfind("scenario,fpr,tpr,threshold\n", 0) != 0) problems.push_back("roc.csv");
  const std::string table = slurp(out / "table.txt");
  if (table.find("AUCROC") == std::string::npos || table.find("Treatment") == std::string::npos)
    problems.push_back("table.txt");
  std::ifstream pred(out / "predictions.csv");
  std::string line;
  std::getline(pred, line);
  if (line != "embryo_id,treatment_id,score") problems.push_back("predictions header");
  std::size_t rows = 0;
  while (std::getline(pred, line)) {
    const auto cells = data::split_csv_line(line);
    if (cells.size() != 3 || !std::isfinite(data::parse_real(cells[2]))) problems.push_back("predictions row");
    ++rows;
  }
  const auto ds = data::load_dataset(dir / "data");
  std::size_t embryos = 0;
  for (const auto& cy : ds.cycles) embryos += cy.embryos.size();
  if (rows != embryos) problems.push_back("prediction count");
  fs::remove_all(dir);
  std::string detail = "gen/train/eval/predict exit 0, " + std::to_string(rows) + " predictions, " +
                       fmt("%.0f", secs) + " s";
  for (const auto& p : problems) detail += "; bad " + p;
  return {problems.empty() && secs < 25 * 60, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient integrity", gradient_integrity}, {"metric oracle equivalence", metric_oracles},
      {"pipeline constants", pipeline_constants},    {"split contract", split_contract},
      {"planted-signal learnability", learnability}, {"masked-padding invariance", padding_invariance},
      {"determinism", determinism},               {"overfit sanity", overfit},
      {"end-to-end smoke", smoke},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << n << " (" << criteria[i].first << "): " << (o.pass ? "PASS" : "FAIL") << "  "
              << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
