#include "mmv/cli/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <yaml-cpp/exceptions.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mmv/cli/gradcheck_suite.hpp"
#include "mmv/cli/report.hpp"
#include "mmv/dataset/io.hpp"
#include "mmv/dataset/normalize.hpp"
#include "mmv/dataset/split.hpp"
#include "mmv/model/checkpoint.hpp"
#include "mmv/synth/synth.hpp"
#include "mmv/tabular/tabular.hpp"
#include "mmv/train/examples.hpp"

namespace mmv::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kGradTolerance = 1e-4;

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw data::DataError("cannot create " + dir.string() + ": " + ec.message());
}

std::string peek_magic(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw data::DataError("cannot read checkpoint " + file.string());
  std::string magic(5, '\0');
  in.read(magic.data(), 5);
  if (in.gcount() != 5) throw data::DataError(file.string() + ": truncated checkpoint");
  return magic;
}

data::TabularNormalizer fit_interp(const data::Dataset& ds, std::span<const std::size_t> train) {
  return ds.interp_schema.empty() ? data::TabularNormalizer{} : data::fit_interp_normalizer(ds, train);
}

/// Frame size and class counts of the dataset's media.
void derive_media(model::ModelConfig& mc, const data::Dataset& ds) {
  for (const auto& c : ds.cycles)
    for (const auto& e : c.embryos) {
      if (e.video.height != e.video.width) throw data::DataError(e.embryo_id + ": frames must be square");
      mc.frame_size = e.video.height;
      if (e.morph) {
        mc.zona_classes = e.morph->zona_classes;
        mc.stage_classes = e.morph->stage_classes;
      }
      return;
    }
  throw data::DataError("dataset has no embryos");
}

/// A trained regressor together with what is needed to feed it.
struct Loaded {
  std::unique_ptr<model::Regressor<float>> model;
  std::unique_ptr<model::Model<float>> multimodal;  // aliases `model` for the multimodal case
  train::InputFn inputs;
  data::TabularNormalizer ehr;
  data::TabularNormalizer interp;
};

Loaded load_any(const fs::path& file) {
  Loaded l;
  const std::string magic = peek_magic(file);
  json extra;
  if (magic == model::kModelMagic) {
    auto lm = model::load_model(file);
    extra = lm.extra;
    l.inputs = train::multimodal_inputs(lm.model.config());
    l.model = std::make_unique<model::Model<float>>(std::move(lm.model));
  } else if (magic == tabular::kTabularMagic) {
    auto lt = tabular::load_tabular(file);
    extra = lt.extra;
    l.inputs = train::tabular_inputs();
    l.model = std::make_unique<tabular::TabularModel<float>>(std::move(lt.model));
  } else {
    throw data::DataError(file.string() + ": not a model checkpoint");
  }
  if (!extra.contains("ehr_normalizer") || !extra.contains("interp_normalizer"))
    throw data::DataError(file.string() + ": checkpoint lacks normalizer statistics");
  l.ehr = data::TabularNormalizer::from_json(extra.at("ehr_normalizer"));
  l.interp = data::TabularNormalizer::from_json(extra.at("interp_normalizer"));
  return l;
}

std::size_t most_frames(std::span<const train::Example> examples) {
  std::size_t n = 0;
  for (const auto& e : examples) n = std::max(n, e.sample.video.frames);
  return n;
}

void drop_media(std::vector<train::Example>& examples) {
  for (auto& e : examples) {
    e.sample.video.pixels = {};
    e.sample.morph.reset();
  }
}

}  // namespace

std::vector<std::size_t> split_cycles(const RunConfig& config, const data::Dataset& ds, const std::string& split) {
  if (split == "all") {
    std::vector<std::size_t> all(ds.cycles.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  const auto s = data::stratified_split(ds.cycles, {8, 1, 1}, config.split_seed);
  if (split == "train") return s.train;
  if (split == "val") return s.val;
  if (split == "test") return s.test;
  throw ConfigError("unknown split '" + split + "'; expected train, val, test or all");
}

train::TrainHistory train_run(const RunConfig& config, const data::Dataset& ds, const fs::path& out_dir,
                              std::ostream* log) {
  config.validate();
  const Modality mod = config.selector();
  const auto split = data::stratified_split(ds.cycles, {8, 1, 1}, config.split_seed);
  const auto ehr = data::fit_ehr_normalizer(ds, split.train);
  const auto interp = fit_interp(ds, split.train);
  if (mod.interp && interp.width() == 0) throw data::DataError("modality needs interpretable features; dataset has none");
  auto train_set = train::build_examples(ds, split.train, ehr, interp, true);
  auto val_set = train::build_examples(ds, split.val, ehr, interp, true);

  train::TrainConfig tc = config.train;
  tc.seed = config.seed;
  const json extra = {{"modality", mod.str()},
                      {"seed", config.seed},
                      {"split_seed", config.split_seed},
                      {"ehr_normalizer", ehr.to_json()},
                      {"interp_normalizer", interp.to_json()}};
  ensure_dir(out_dir);
  const fs::path ckpt = out_dir / kCheckpointFile;

  train::TrainHistory history;
  if (mod.tabular()) {
    drop_media(train_set);
    drop_media(val_set);
    tabular::TabularConfig tab = config.tabular;
    tab.use_ehr = mod.ehr;
    tab.use_interp = mod.interp;
    tab.ehr_layout = ehr.layout();
    tab.interp_layout = interp.layout();
    tab.seed = config.seed;
    tabular::TabularModel<float> m(tab);
    history = train::train(m, train::tabular_inputs(), train_set, val_set, split.train, tc);
    save_tabular(ckpt, m, extra);
  } else {
    model::ModelConfig mc = config.model;
    derive_media(mc, ds);
    mc.use_video = mod.video;
    mc.use_morph = mod.morph;
    mc.use_ehr = mod.ehr;
    mc.use_interp = mod.interp;
    mc.ehr_width = mod.ehr ? ehr.width() : 0;
    mc.interp_width = mod.interp ? interp.width() : 0;
    mc.seed = config.seed;
    const std::size_t frames = std::max(most_frames(train_set), most_frames(val_set));
    if (frames > mc.max_frames)
      throw ConfigError("model.max_frames is " + std::to_string(mc.max_frames) + " but videos subsample to " +
                        std::to_string(frames) + " frames");
    model::Model<float> m(mc);
    if (mc.freeze_spatial && !tc.augment) {
      train::cache_visual(m, train_set);
      train::cache_visual(m, val_set);
    }
    history = train::train(m, train::multimodal_inputs(mc), train_set, val_set, split.train, tc);
    save_model(ckpt, m, extra);
  }
  history.write_csv(out_dir / "history.csv");
  write_text(out_dir / kSnapshotFile, to_yaml(config));
  if (log)
    *log << "trained " << mod.str() << " seed " << config.seed << ": " << history.epochs.size() << " epochs ("
         << history.stop_reason << "), best val loss " << data::format_real(history.best_val_loss()) << " at epoch "
         << history.best_epoch << "\n";
  return history;
}

metrics::Predictions predict_run(const fs::path& checkpoint, const data::Dataset& ds,
                                 const std::vector<std::size_t>& cycles, bool transferred_only) {
  Loaded l = load_any(checkpoint);
  const auto examples = train::build_examples(ds, cycles, l.ehr, l.interp, transferred_only);
  const auto scores = train::predict(*l.model, l.inputs, examples, 8);
  metrics::Predictions p;
  for (std::size_t i = 0; i < examples.size(); ++i) p[examples[i].embryo_id] = scores[i];
  return p;
}

metrics::MetricsReport eval_run(const RunConfig& config, const data::Dataset& ds, const fs::path& checkpoint,
                                const fs::path& out_dir) {
  const auto cycles = split_cycles(config, ds, config.eval_split);
  const auto preds = predict_run(checkpoint, ds, cycles, true);
  std::vector<data::TreatmentCycle> subset;
  for (std::size_t i : cycles) subset.push_back(ds.cycles[i]);
  const auto report = metrics::evaluate(preds, subset);
  write_report(report, config.selector().str(), out_dir);
  write_text(out_dir / kSnapshotFile, to_yaml(config));
  return report;
}

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::size_t repeats = 1;
  std::optional<std::string> checkpoint;
  std::optional<std::string> split;
};

RunConfig resolve(const Options& o) {
  RunConfig c = load_run_config(o.config_path);
  if (o.out) c.out_dir = *o.out;
  return c;
}

std::vector<std::uint64_t> repeat_seeds(const RunConfig& c, std::size_t n) {
  std::vector<std::uint64_t> s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(c.seed + i);
  return s;
}

fs::path seed_dir(const RunConfig& c, std::uint64_t seed, std::size_t repeats) {
  return repeats > 1 ? c.out_dir / ("seed_" + std::to_string(seed)) : c.out_dir;
}

void cmd_gen(const Options& o, std::ostream& out) {
  RunConfig c = load_run_config(o.config_path);
  if (o.seed) c.synth.seed = *o.seed;
  const fs::path root = o.out ? fs::path(*o.out) : c.data_dir;
  if (fs::exists(root / "manifest.json")) throw data::DataError(root.string() + " already holds a dataset");
  const auto corpus = synth::generate_dataset(c.synth, root);
  std::size_t successes = 0;
  for (const auto& cy : corpus.dataset.cycles) successes += cy.success();
  write_text(root / kSnapshotFile, to_yaml(c));
  out << "wrote " << corpus.dataset.cycles.size() << " treatments (" << successes << " successful) to "
      << root.string() << "\n";
}

void cmd_train(const Options& o, std::ostream& out) {
  RunConfig c = resolve(o);
  if (o.seed) c.seed = *o.seed;
  const auto ds = data::load_dataset(c.data_dir);
  std::vector<double> best;
  json runs = json::array();
  for (std::uint64_t s : repeat_seeds(c, o.repeats)) {
    RunConfig rc = c;
    rc.seed = s;
    const fs::path dir = seed_dir(c, s, o.repeats);
    const auto h = train_run(rc, ds, dir, &out);
    best.push_back(h.best_val_loss());
    runs.push_back({{"seed", s}, {"best_val_loss", h.best_val_loss()}, {"best_epoch", h.best_epoch},
                    {"epochs", h.epochs.size()}, {"stop_reason", h.stop_reason}});
  }
  if (o.repeats > 1) {
    const auto ms = mean_sd(best);
    write_text(c.out_dir / "repeats.json",
               json{{"runs", runs}, {"best_val_loss", {{"mean", ms.mean}, {"sd", ms.sd}}}}.dump(2) + "\n");
    write_text(c.out_dir / kSnapshotFile, to_yaml(c));
    out << "best val loss " << data::format_real(ms.mean) << " +- " << data::format_real(ms.sd) << " over "
        << o.repeats << " seeds\n";
  }
}

void cmd_eval(const Options& o, std::ostream& out) {
  RunConfig c = resolve(o);
  if (o.seed) c.seed = *o.seed;
  if (o.split) c.eval_split = *o.split;
  c.validate();
  if (o.checkpoint && o.repeats > 1) throw ConfigError("--checkpoint cannot be combined with --repeats");
  const auto ds = data::load_dataset(c.data_dir);
  std::array<std::vector<double>, 4> cells;
  json runs = json::array();
  for (std::uint64_t s : repeat_seeds(c, o.repeats)) {
    RunConfig rc = c;
    rc.seed = s;
    const fs::path dir = seed_dir(c, s, o.repeats);
    const fs::path ckpt = o.checkpoint ? fs::path(*o.checkpoint) : dir / kCheckpointFile;
    const auto r = eval_run(rc, ds, ckpt, dir);
    const double v[4] = {r.embryo.auc, r.embryo.f1, r.treatment.auc, r.treatment.f1};
    for (int i = 0; i < 4; ++i) cells[i].push_back(v[i]);
    auto j = metrics::to_json(r);
    j["seed"] = s;
    runs.push_back(j);
    if (o.repeats == 1) out << render_table({table_row(c.selector().str(), r)});
  }
  if (o.repeats > 1) {
    static const char* keys[4] = {"embryo_auc", "embryo_f1", "treatment_auc", "treatment_f1"};
    json summary = {{"runs", runs}};
    TableRow row{c.selector().str(), {}};
    for (int i = 0; i < 4; ++i) {
      const auto ms = mean_sd(cells[i]);
      summary[keys[i]] = {{"mean", ms.mean}, {"sd", ms.sd}};
      char buf[48];
      std::snprintf(buf, sizeof buf, "%.3f ± %.3f", ms.mean, ms.sd);
      row.cells[i] = buf;
    }
    write_text(c.out_dir / "metrics_summary.json", summary.dump(2) + "\n");
    const std::string table = render_table({row});
    write_text(c.out_dir / "table.txt", table);
    write_text(c.out_dir / kSnapshotFile, to_yaml(c));
    out << table;
  }
}

void cmd_predict(const Options& o, std::ostream& out) {
  RunConfig c = resolve(o);
  if (o.seed) c.seed = *o.seed;
  const auto ds = data::load_dataset(c.data_dir);
  const auto cycles = split_cycles(c, ds, o.split.value_or(c.eval_split));
  const fs::path ckpt = o.checkpoint ? fs::path(*o.checkpoint) : c.out_dir / kCheckpointFile;
  const auto preds = predict_run(ckpt, ds, cycles, false);
  std::string csv = "embryo_id,treatment_id,score\n";
  for (std::size_t ci : cycles)
    for (const auto& e : ds.cycles[ci].embryos)
      csv += e.embryo_id + ',' + ds.cycles[ci].treatment_id + ',' + data::format_real(preds.at(e.embryo_id)) + '\n';
  ensure_dir(c.out_dir);
  write_text(c.out_dir / "predictions.csv", csv);
  write_text(c.out_dir / kSnapshotFile, to_yaml(c));
  out << "wrote " << preds.size() << " predictions to " << (c.out_dir / "predictions.csv").string() << "\n";
}

int cmd_gradcheck(std::ostream& out) {
  double worst = 0.0;
  for (const auto& e : run_gradcheck_suite()) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-22s %8zu coords  max rel err %.3e\n", e.name.c_str(), e.coordinates,
                  e.max_relative_error);
    out << buf;
    worst = std::max(worst, e.max_relative_error);
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "worst %.3e (tolerance %.0e)\n", worst, kGradTolerance);
  out << buf;
  if (!(worst < kGradTolerance)) throw NumericalError("gradient check exceeded tolerance");
  return kExitOk;
}

void apply_thread_env() {
#ifdef _OPENMP
  if (const char* t = std::getenv("MMV_THREADS")) {
    const int n = std::atoi(t);
    if (n < 1) throw ConfigError("MMV_THREADS must be a positive integer");
    omp_set_num_threads(n);
  }
#endif
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal embryo viability models: data generation, training and evaluation", "mmv"};
  app.require_subcommand(1, 1);
  Options o;

  auto common = [&](CLI::App* sub, bool with_repeats) {
    sub->add_option("--config", o.config_path, "YAML run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Override the run seed (synth.seed for gen)");
    sub->add_option("--out", o.out, "Output directory");
    if (with_repeats)
      sub->add_option("--repeats", o.repeats, "Rerun with seeds seed..seed+N-1 into per-seed subdirectories")
          ->check(CLI::PositiveNumber);
  };
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  common(gen, false);
  auto* trn = app.add_subcommand("train", "Train a model and write its checkpoint");
  common(trn, true);
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out split");
  common(evl, true);
  evl->add_option("--checkpoint", o.checkpoint, "Checkpoint file (default <out>/model.ckpt)");
  evl->add_option("--split", o.split, "val or test (default run.eval_split)");
  auto* prd = app.add_subcommand("predict", "Write per-embryo scores");
  common(prd, false);
  prd->add_option("--checkpoint", o.checkpoint, "Checkpoint file (default <out>/model.ckpt)");
  prd->add_option("--split", o.split, "train, val, test or all (default run.eval_split)");
  auto* grad = app.add_subcommand("gradcheck", "Check analytic gradients against finite differences");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    apply_thread_env();
    if (gen->parsed()) cmd_gen(o, out);
    if (trn->parsed()) cmd_train(o, out);
    if (evl->parsed()) cmd_eval(o, out);
    if (prd->parsed()) cmd_predict(o, out);
    if (grad->parsed()) return cmd_gradcheck(out);
    return kExitOk;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const YAML::Exception& e) {
    err << "config error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace mmv::cli
