#include "dcl4kt/cli.hpp"

#include "dcl4kt/config.hpp"
#include "dcl4kt/csv.hpp"
#include "dcl4kt/experiments.hpp"
#include "dcl4kt/plot.hpp"
#include "dcl4kt/prepared.hpp"
#include "dcl4kt/synth.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>

namespace dcl4kt {

namespace fs = std::filesystem;

namespace {

// Config keys exposed as --dashed-flags, grouped by the commands that use them.
const std::vector<std::string> kSplitKeys = {"seed", "train_frac", "valid_frac", "test_frac"};
const std::vector<std::string> kModelKeys = {"embed_dim", "num_heads", "layers_per_encoder", "num_encoders",
                                             "max_len", "conv_kernel_size", "ffn_multiplier", "dropout",
                                             "monotonic_decay"};
const std::vector<std::string> kTrainKeys = {"seed", "lambda_c", "learning_rate", "batch_size",
                                             "early_stop_patience", "max_epochs", "grad_accum_steps",
                                             "temperature", "fallback_positive", "fallback_negative",
                                             "augmentation_preset"};
const std::vector<std::string> kTrainSwitches = {"augment", "untied_encoders", "separate_negative_tables",
                                                 "hard_negative_only", "bce_only"};
const std::vector<std::string> kTextKeys = {"text_embed_dim", "text_heads",  "text_layers",       "text_max_tokens",
                                            "text_epochs",    "text_batch_size", "text_learning_rate", "text_input"};

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

/// Options shared by every subcommand.
struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  Config flags;
  std::string out;

  Config resolve() const {
    Config c = config_file.empty() ? Config() : Config::load(config_file);
    for (const auto& s : sets) c.set(s);
    for (const auto& [k, v] : flags.values()) c.set(k, v);
    return c;
  }
  fs::path out_root() const { return out; }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_file, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "override a config key (key=value), repeatable");
  app->add_option("--out", c.out, "output root (default: $DCL4KT_OUT or ./out)");
}

void add_keys(CLI::App* app, Config& flags, const std::vector<std::string>& keys) {
  for (const auto& key : keys) {
    if (app->get_option_no_throw("--" + dashed(key))) continue;
    app->add_option_function<std::string>(
        "--" + dashed(key), [&flags, key](const std::string& v) { flags.set(key, v); }, "config key " + key);
  }
}

void add_switches(CLI::App* app, Config& flags, const std::vector<std::string>& keys) {
  for (const auto& key : keys)
    app->add_flag_callback("--" + dashed(key), [&flags, key] { flags.set(key, "true"); }, "sets " + key + "=true");
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (double v : parse_double_list(text)) {
    if (v < 0 || v != std::floor(v)) throw InputError("seeds must be non-negative integers");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  if (out.empty()) throw InputError("seed list is empty");
  return out;
}

std::string fmt(double v, int precision = 4) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

void write_history(const fs::path& path, const std::vector<EpochRecord>& history) {
  csv::Writer w(path);
  w.row({"epoch", "train_loss", "bce", "cl", "valid_auc", "valid_rmse"});
  for (const auto& r : history)
    w.row({std::to_string(r.epoch), csv::format_double(r.train_loss), csv::format_double(r.bce),
           csv::format_double(r.cl), csv::format_double(r.valid_auc), csv::format_double(r.valid_rmse)});
}

void write_metrics(const fs::path& path, const std::string& split, const MetricSummary& m) {
  csv::Writer w(path);
  w.row({"split", "auc", "rmse", "count"});
  w.row({split, csv::format_double(m.auc), csv::format_double(m.rmse), std::to_string(m.count)});
}

std::string item_id(const Vocab& v, int index) {
  if (index == v.mask()) return "[MASK]";
  if (index == v.unk()) return "[UNK]";
  if (index <= 0) return "";
  return v.id(index);
}

void dump_views(const fs::path& path, const Dataset& d, std::span<const Sequence> original, const AugmentedBatch& v1,
                const AugmentedBatch& v2) {
  csv::Writer w(path);
  w.row({"view", "sequence", "position", "question_id", "concept_id", "response", "strategies"});
  auto emit = [&](const std::string& view, std::size_t i, const Sequence& seq, std::string strategies) {
    for (std::size_t t = 0; t < seq.size(); ++t)
      w.row({view, std::to_string(i), std::to_string(t), item_id(*d.questions, seq[t].question),
             item_id(*d.concepts, seq[t].kc), std::to_string(seq[t].response), t == 0 ? strategies : ""});
  };
  auto fired = [](const AugmentedBatch& b, std::size_t i) {
    std::string s;
    for (std::size_t k = 0; k < kStrategyCount; ++k)
      if (b.fired[i][k]) s += (s.empty() ? "" : ";") + std::string(key_of(static_cast<Strategy>(k)));
    return s;
  };
  for (std::size_t i = 0; i < original.size(); ++i) {
    emit("original", i, original[i], "");
    emit("view1", i, v1.sequences[i], fired(v1, i));
    emit("view2", i, v2.sequences[i], fired(v2, i));
  }
}

SplitRatio ratio_from(const Config& c) {
  SplitRatio r;
  r.train = c.get_double("train_frac", r.train);
  r.test = c.get_double("test_frac", 1.0 - r.train);
  r.valid_of_train = c.get_double("valid_frac", r.valid_of_train);
  return r;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Common& common, const Config& cfg, const std::string& dir_opt, std::ostream& out) {
  SynthConfig sc;
  sc.students = static_cast<int>(cfg.get_int("students", sc.students));
  sc.questions = static_cast<int>(cfg.get_int("questions", sc.questions));
  sc.concepts = static_cast<int>(cfg.get_int("concepts", sc.concepts));
  sc.min_length = static_cast<int>(cfg.get_int("min_length", sc.min_length));
  sc.max_length = static_cast<int>(cfg.get_int("max_length", sc.max_length));
  sc.target_correct = cfg.get_double("target_correct", sc.target_correct);
  sc.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  fs::path dir = dir_opt.empty() ? common.out_root() / "synth" : fs::path(dir_opt);
  auto data = generate_synthetic(sc);
  fs::create_directories(dir);
  write_synthetic(dir, data);
  double correct = 0;
  for (const auto& r : data.interactions) correct += r.response;
  out << "synth: " << sc.students << " students, " << sc.questions << " questions, " << sc.concepts
      << " concepts, " << data.interactions.size() << " interactions, mean correctness "
      << fmt(correct / static_cast<double>(data.interactions.size()), 3) << "\n"
      << "wrote " << (dir / "interactions.csv").string() << "\n";
  return kExitOk;
}

struct PrepareArgs {
  std::string input, question_texts, concept_texts, dir;
  ColumnMapping columns;
};

int cmd_prepare(const Common& common, const Config& cfg, const PrepareArgs& a, std::ostream& out) {
  PrepareOptions opts;
  opts.input = a.input;
  opts.columns = a.columns;
  opts.question_texts = a.question_texts;
  opts.concept_texts = a.concept_texts;
  opts.ratio = ratio_from(cfg);
  opts.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  fs::path dir = a.dir.empty() ? common.out_root() / "prepared" : fs::path(a.dir);
  auto s = prepare_artifacts(opts, dir);
  out << "prepared " << dir.string() << "\n"
      << "  students     train " << s.students[0] << ", valid " << s.students[1] << ", test " << s.students[2] << "\n"
      << "  interactions train " << s.interactions[0] << ", valid " << s.interactions[1] << ", test "
      << s.interactions[2] << "\n"
      << "  vocab        " << s.questions << " questions, " << s.concepts << " concepts\n"
      << "  dropped rows " << s.dropped_rows << "\n"
      << "  text features: question " << (s.question_texts ? "available" : "unavailable") << ", concept "
      << (s.concept_texts ? "available" : "unavailable") << "\n";
  return kExitOk;
}

fs::path prepared_dir(const Common& common, const std::string& opt) {
  return opt.empty() ? common.out_root() / "prepared" : fs::path(opt);
}

struct TrainArgs {
  std::string prepared, difficulty, run_name = "train", dump_augmented;
};

int cmd_train(const Common& common, const Config& cfg, const TrainArgs& a, std::ostream& out, std::ostream& err) {
  auto p = load_prepared(prepared_dir(common, a.prepared), a.difficulty);
  auto settings = ExperimentSettings::from_config(cfg);
  p.table.fallback_positive = settings.fallback_positive;
  p.table.fallback_negative = settings.fallback_negative;
  p.table.validate();
  settings.model.untied_encoders = cfg.get_bool("untied_encoders", settings.model.untied_encoders);
  const fs::path run = common.out_root() / "runs" / a.run_name;
  fs::create_directories(run);

  TrainingObserver obs;
  obs.on_epoch = [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << "  loss " << fmt(r.train_loss) << "  bce " << fmt(r.bce) << "  cl " << fmt(r.cl)
        << "  valid_auc " << fmt(r.valid_auc) << "  valid_rmse " << fmt(r.valid_rmse) << std::endl;
  };
  if (!a.dump_augmented.empty())
    obs.on_first_augmented = [&](std::span<const Sequence> batch, const AugmentedBatch& v1, const AugmentedBatch& v2) {
      dump_views(a.dump_augmented, p.split.train, batch, v1, v2);
    };
  auto o = run_experiment(p.split, p.table, settings, settings.training.seed, &obs);
  write_history(run / "history.csv", o.result.history);
  if (o.result.diverged) {
    err << "training diverged: " << o.result.divergence_message << " (history kept in "
        << (run / "history.csv").string() << ")\n";
    return kExitDivergence;
  }
  save_checkpoint(run / "checkpoint.json", *o.model);
  write_metrics(run / "metrics.csv", "test", o.test);
  out << "best epoch " << o.result.best_epoch << " (valid auc " << fmt(o.result.best_valid_auc) << ")\n"
      << "test auc " << fmt(o.test.auc) << "  rmse " << fmt(o.test.rmse) << "  n " << o.test.count << "\n"
      << "wrote " << run.string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string prepared, difficulty, checkpoint, split = "test", metrics_out;
};

int cmd_evaluate(const Common& common, const Config& cfg, const EvalArgs& a, std::ostream& out) {
  auto p = load_prepared(prepared_dir(common, a.prepared), a.difficulty);
  fs::path ckpt = a.checkpoint.empty() ? common.out_root() / "runs" / "train" / "checkpoint.json" : fs::path(a.checkpoint);
  if (!fs::exists(ckpt)) throw MissingArtifactError("missing checkpoint: " + ckpt.string() + " (run train first)");
  Model model = load_checkpoint(ckpt);
  if (model.config().question_rows != p.split.train.questions->table_rows() ||
      model.config().concept_rows != p.split.train.concepts->table_rows())
    throw InputError("checkpoint vocabulary does not match the prepared data");
  p.table.fallback_positive = cfg.get_double("fallback_positive", p.table.fallback_positive);
  p.table.fallback_negative = cfg.get_double("fallback_negative", p.table.fallback_negative);
  const Dataset& d = a.split == "train" ? p.split.train : a.split == "valid" ? p.split.valid : p.split.test;
  auto m = evaluate(model, d, p.table, static_cast<int>(cfg.get_int("batch_size", 512)));
  out << "split " << a.split << "  auc " << fmt(m.auc) << "  rmse " << fmt(m.rmse) << "  n " << m.count << "\n";
  fs::path metrics = a.metrics_out.empty() ? ckpt.parent_path() / ("metrics_" + a.split + ".csv") : fs::path(a.metrics_out);
  write_metrics(metrics, a.split, m);
  out << "wrote " << metrics.string() << "\n";
  return kExitOk;
}

struct AblateArgs {
  std::string which, prepared, seeds = "0,1,2", grid = "0,0.1,0.5,0.8,1", probs = "0.1,0.2,0.3";
  double unseen_frac = 0.25;
  double holdout_frac = 0.3;
};

void plot_summary_bars(const fs::path& path, const std::string& title, const std::vector<ArmSummary>& rows) {
  std::vector<std::string> labels;
  std::vector<double> values, errors;
  for (const auto& r : rows) {
    labels.push_back(r.arm);
    values.push_back(r.mean_auc);
    errors.push_back(r.std_auc);
  }
  plot::bar_chart(path, {title, "arm", "test AUC"}, labels, values, errors);
}

void plot_augment(const fs::path& path, const std::vector<ArmSummary>& rows, const std::vector<double>& probs) {
  std::vector<plot::Series> series;
  const double lo = probs.empty() ? 0 : *std::min_element(probs.begin(), probs.end());
  const double hi = probs.empty() ? 1 : *std::max_element(probs.begin(), probs.end());
  for (const auto& r : rows) {
    if (r.arm == "baseline" || r.arm == "mixed") {
      series.push_back({r.arm, {lo, hi}, {r.mean_auc, r.mean_auc}, {}});
      continue;
    }
    auto it = std::find_if(series.begin(), series.end(), [&](const plot::Series& s) { return s.name == r.arm; });
    if (it == series.end()) {
      series.push_back({r.arm, {}, {}, {}});
      it = std::prev(series.end());
    }
    it->x.push_back(r.setting);
    it->y.push_back(r.mean_auc);
  }
  plot::line_chart(path, {"augmentation strategies", "application probability", "test AUC"}, series);
}

void write_rmse_rows(csv::Writer& w, const std::string& kind, const std::vector<RmseRow>& rows) {
  for (const auto& r : rows) w.row({kind, r.predictor, csv::format_double(r.rmse)});
}

int cmd_ablate(const Common& common, const Config& cfg, const AblateArgs& a, std::ostream& out) {
  auto p = load_prepared(prepared_dir(common, a.prepared));
  auto settings = ExperimentSettings::from_config(cfg);
  p.table.fallback_positive = settings.fallback_positive;
  p.table.fallback_negative = settings.fallback_negative;
  const fs::path dir = common.out_root() / "ablate" / a.which;
  fs::create_directories(dir);
  auto seeds = parse_seeds(a.seeds);

  if (a.which == "difficulty-prediction") {
    auto tcfg = TextModelConfig::from_config(cfg);
    auto r = difficulty_prediction(p.split, tcfg, a.holdout_frac, seeds.front());
    {
      csv::Writer w(dir / "rmse.csv");
      w.row({"kind", "predictor", "rmse"});
      write_rmse_rows(w, "question", r.question);
      write_rmse_rows(w, "concept", r.concept_rows);
    }
    {
      csv::Writer w(dir / "fit.csv");
      w.row({"kind", "train_rmse", "holdout_rmse", "holdout_items"});
      w.row({"question", csv::format_double(r.question_fit.train_rmse), csv::format_double(r.question_fit.holdout_rmse),
             std::to_string(r.question_holdout)});
      w.row({"concept", csv::format_double(r.concept_fit.train_rmse), csv::format_double(r.concept_fit.holdout_rmse),
             std::to_string(r.concept_holdout)});
    }
    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& [kind, rows] : {std::pair{"question", &r.question}, std::pair{"concept", &r.concept_rows}})
      for (const auto& row : *rows) {
        labels.push_back(std::string(kind) + ":" + row.predictor);
        values.push_back(row.rmse);
        out << kind << "  " << std::left << std::setw(16) << row.predictor << " rmse " << fmt(row.rmse) << "\n";
      }
    plot::bar_chart(dir / "rmse.svg", {"difficulty prediction", "predictor", "RMSE (0-100)"}, labels, values);
    auto length = char_length_analysis(merge_splits(p.split), static_cast<std::size_t>(cfg.get_int("length_cap", 120)));
    write_length_report(dir / "length.csv", length);
    out << "wrote " << dir.string() << "\n";
    return kExitOk;
  }

  std::vector<ArmResult> rows;
  if (a.which == "diff-cl") {
    auto u = hide_questions_from_train(p.split, a.unseen_frac, seeds.front());
    out << "hid " << u.removed_questions.size() << " questions from train; unseen share of test items "
        << fmt(u.unseen_test_item_share, 3) << "\n";
    rows = diff_cl_ablation(u.split, settings, seeds);
  } else if (a.which == "lambda-sweep") {
    rows = lambda_sweep(p.split, p.table, settings, parse_double_list(a.grid), seeds);
  } else {
    rows = augment_sweep(p.split, p.table, settings, parse_double_list(a.probs), seeds);
  }
  auto summary = summarize(rows);
  write_results(dir / "results.csv", rows);
  write_summary(dir / "summary.csv", summary);
  for (const auto& s : summary)
    out << std::left << std::setw(22) << s.arm << " setting " << std::setw(6) << csv::format_double(s.setting)
        << " auc " << fmt(s.mean_auc) << " +- " << fmt(s.std_auc) << "  rmse " << fmt(s.mean_rmse) << "\n";
  if (a.which == "diff-cl") {
    plot_summary_bars(dir / "summary.svg", "Diff-CL vs Non-Diff-CL", summary);
  } else if (a.which == "lambda-sweep") {
    plot::Series s{"test AUC", {}, {}, {}};
    for (const auto& r : summary) {
      s.x.push_back(r.setting);
      s.y.push_back(r.mean_auc);
      s.err.push_back(r.std_auc);
    }
    plot::line_chart(dir / "summary.svg", {"contrastive loss ratio", "lambda_c", "test AUC"}, {s});
  } else {
    plot_augment(dir / "summary.svg", summary, parse_double_list(a.probs));
  }
  out << "wrote " << dir.string() << "\n";
  return kExitOk;
}

struct PredictArgs {
  std::string prepared;
};

int cmd_predict_diff(const Common& common, const Config& cfg, const PredictArgs& a, std::ostream& out) {
  auto dir = prepared_dir(common, a.prepared);
  auto p = load_prepared(dir);
  const auto& train = p.split.train;
  if (!train.question_texts && !train.concept_texts)
    throw InputError("predict-diff needs question_texts.csv or concept_texts.csv in " + dir.string());
  auto tcfg = TextModelConfig::from_config(cfg);
  std::optional<TextDiffModel> qm, cm;
  auto qpairs = difficulty_pairs(train, p.table, ItemKind::Question, Provenance::Train, tcfg.input);
  auto cpairs = difficulty_pairs(train, p.table, ItemKind::Concept, Provenance::Train, TextInput::Own);
  if (!qpairs.empty()) qm.emplace(fit_text_model(qpairs, tcfg));
  if (!cpairs.empty()) cm.emplace(fit_text_model(cpairs, tcfg));
  FillStats stats;
  auto filled = fill_unseen(p.table, qm ? &*qm : nullptr, cm ? &*cm : nullptr, tcfg.input, p.split, &stats);
  write_table(dir / "difficulty_text.csv", filled, *train.questions, *train.concepts);

  csv::Writer w(dir / "predictions.csv");
  w.row({"id", "kind", "predicted_difficulty", "source"});
  for (auto kind : {ItemKind::Question, ItemKind::Concept}) {
    const Vocab& v = kind == ItemKind::Question ? *train.questions : *train.concepts;
    const auto& base = p.table.values(kind);
    const auto& now = filled.values(kind);
    for (int i = 1; i <= v.live_size(); ++i) {
      std::string source = base.count(i) ? "ctt" : now.count(i) ? "text_model" : "fallback";
      double value = now.count(i) ? now.at(i) : filled.fallback_positive;
      w.row({v.id(i), std::string(to_string(kind)), csv::format_double(value), source});
    }
  }
  if (qm) out << "question model: " << qpairs.size() << " pairs, train rmse " << fmt(qm->report().train_rmse) << "\n";
  if (cm) out << "concept model: " << cpairs.size() << " pairs, train rmse " << fmt(cm->report().train_rmse) << "\n";
  out << "filled " << stats.predicted_questions << " questions and " << stats.predicted_concepts
      << " concepts unseen in train; " << stats.without_text << " kept the fallback\n"
      << "wrote " << (dir / "difficulty_text.csv").string() << "\n";
  return kExitOk;
}

struct CvArgs {
  std::string prepared;
  int k = 5;
};

int cmd_cv(const Common& common, const Config& cfg, const CvArgs& a, std::ostream& out) {
  auto p = load_prepared(prepared_dir(common, a.prepared));
  auto settings = ExperimentSettings::from_config(cfg);
  const auto seed = settings.training.seed;
  auto all = merge_splits(p.split);
  auto result = k_fold_cv(all, a.k, seed, [&](const DataSplit& split, int fold) {
    auto table = compute_ctt(split.train);
    table.fallback_positive = settings.fallback_positive;
    table.fallback_negative = settings.fallback_negative;
    auto o = run_experiment(split, table, settings, seed);
    out << "fold " << fold << "  auc " << fmt(o.test.auc) << "  rmse " << fmt(o.test.rmse) << std::endl;
    return std::map<std::string, double>{{"auc", o.test.auc}, {"rmse", o.test.rmse}};
  }, ratio_from(cfg).valid_of_train);
  const fs::path dir = common.out_root() / "cv";
  fs::create_directories(dir);
  {
    csv::Writer w(dir / "folds.csv");
    w.row({"fold", "auc", "rmse"});
    for (const auto& f : result.folds)
      w.row({std::to_string(f.fold), csv::format_double(f.metrics.at("auc")), csv::format_double(f.metrics.at("rmse"))});
  }
  csv::Writer w(dir / "summary.csv");
  w.row({"metric", "mean", "std"});
  for (const auto& [name, m] : result.mean) {
    w.row({name, csv::format_double(m), csv::format_double(result.stddev.at(name))});
    out << name << " " << fmt(m) << " +- " << fmt(result.stddev.at(name)) << "\n";
  }
  return kExitOk;
}

// --- report -----------------------------------------------------------------------

std::optional<csv::Table> try_read(const fs::path& p, std::vector<std::string>& missing) {
  if (!fs::exists(p)) {
    missing.push_back(p.string());
    return std::nullopt;
  }
  return csv::read(p);
}

std::vector<double> numbers(const csv::Table& t, const std::string& col) {
  std::vector<double> out;
  auto c = t.column(col);
  if (!c) return out;
  for (const auto& r : t.rows) out.push_back(*c < r.size() && !r[*c].empty() ? std::strtod(r[*c].c_str(), nullptr) : NAN);
  return out;
}

std::vector<std::string> strings(const csv::Table& t, const std::string& col) {
  std::vector<std::string> out;
  auto c = t.column(col);
  if (!c) return out;
  for (const auto& r : t.rows) out.push_back(*c < r.size() ? r[*c] : "");
  return out;
}

int cmd_report(const Common& common, const std::string& prepared_opt, std::ostream& out, std::ostream& err) {
  const fs::path root = common.out_root();
  const fs::path fig = root / "report_figures";
  std::vector<std::string> missing;
  std::ostringstream md;
  md << "# Experiment report\n\n";
  int figures = 0;
  auto figure = [&](const std::string& title, const fs::path& svg, const std::string& note) {
    md << "## " << title << "\n\n![" << title << "](" << fs::relative(svg, root).generic_string() << ")\n\n" << note
       << "\n\n";
    ++figures;
  };

  // Training curves.
  if (fs::exists(root / "runs")) {
    std::vector<fs::path> runs;
    for (const auto& e : fs::directory_iterator(root / "runs"))
      if (e.is_directory()) runs.push_back(e.path());
    std::sort(runs.begin(), runs.end());
    std::vector<plot::Series> auc, loss;
    for (const auto& r : runs) {
      auto h = try_read(r / "history.csv", missing);
      if (!h) continue;
      auto name = r.filename().string();
      auc.push_back({name, numbers(*h, "epoch"), numbers(*h, "valid_auc"), {}});
      loss.push_back({name, numbers(*h, "epoch"), numbers(*h, "train_loss"), {}});
    }
    if (!auc.empty()) {
      plot::line_chart(fig / "training_auc.svg", {"validation AUC", "epoch", "AUC"}, auc);
      plot::line_chart(fig / "training_loss.svg", {"training loss", "epoch", "loss"}, loss);
      figure("Validation AUC per epoch", fig / "training_auc.svg", "Source: `runs/*/history.csv`.");
      figure("Training loss per epoch", fig / "training_loss.svg", "Source: `runs/*/history.csv`.");
    }
  }

  // Ablations with a summary table.
  for (const std::string which : {"diff-cl", "lambda-sweep", "augment-sweep"}) {
    const fs::path dir = root / "ablate" / which;
    if (!fs::exists(dir)) continue;
    auto s = try_read(dir / "summary.csv", missing);
    if (!s) continue;
    auto arms = strings(*s, "arm");
    auto setting = numbers(*s, "setting");
    auto mean = numbers(*s, "mean_auc");
    auto sd = numbers(*s, "std_auc");
    const fs::path svg = fig / (which + ".svg");
    if (which == "lambda-sweep") {
      plot::line_chart(svg, {"contrastive loss ratio", "lambda_c", "test AUC"}, {{"test AUC", setting, mean, sd}});
    } else if (which == "diff-cl") {
      plot::bar_chart(svg, {"Diff-CL vs Non-Diff-CL", "arm", "test AUC"}, arms, mean, sd);
    } else {
      std::vector<ArmSummary> rows;
      std::set<double> probs;
      for (std::size_t i = 0; i < arms.size(); ++i) {
        rows.push_back({arms[i], setting[i], mean[i], sd[i], 0, 0, 0});
        if (arms[i] != "baseline" && arms[i] != "mixed") probs.insert(setting[i]);
      }
      plot_augment(svg, rows, {probs.begin(), probs.end()});
    }
    std::ostringstream table;
    table << "| arm | setting | mean AUC | std |\n|---|---|---|---|\n";
    for (std::size_t i = 0; i < arms.size(); ++i)
      table << "| " << arms[i] << " | " << csv::format_double(setting[i]) << " | " << fmt(mean[i]) << " | " << fmt(sd[i])
            << " |\n";
    figure("Ablation: " + which, svg, table.str());
  }

  // Difficulty prediction.
  if (fs::exists(root / "ablate" / "difficulty-prediction")) {
    auto t = try_read(root / "ablate" / "difficulty-prediction" / "rmse.csv", missing);
    if (t) {
      auto kinds = strings(*t, "kind");
      auto preds = strings(*t, "predictor");
      auto rmse = numbers(*t, "rmse");
      std::vector<std::string> labels;
      for (std::size_t i = 0; i < kinds.size(); ++i) labels.push_back(kinds[i] + ":" + preds[i]);
      plot::bar_chart(fig / "difficulty_prediction.svg", {"difficulty prediction", "predictor", "RMSE (0-100)"}, labels,
                      rmse);
      figure("Difficulty prediction RMSE", fig / "difficulty_prediction.svg", "Source: `ablate/difficulty-prediction/rmse.csv`.");
    }
  }

  // Text length against correctness.
  const fs::path prepared = prepared_opt.empty() ? root / "prepared" : fs::path(prepared_opt);
  if (fs::exists(prepared / "manifest.json") && fs::exists(prepared / "question_texts.csv")) {
    auto p = load_prepared(prepared);
    auto report = char_length_analysis(merge_splits(p.split));
    write_length_report(fig / "length.csv", report);
    plot::Series mean{"mean correctness", {}, {}, {}}, median{"median correctness", {}, {}, {}};
    for (const auto& b : report.buckets) {
      double mid = 0.5 * static_cast<double>(b.lo + b.hi);
      mean.x.push_back(mid);
      mean.y.push_back(b.mean_correct);
      median.x.push_back(mid);
      median.y.push_back(b.median_correct);
    }
    plot::line_chart(fig / "length.svg", {"correctness by question length", "characters", "correct rate"}, {mean, median});
    figure("Correctness by question text length", fig / "length.svg",
           "Questions with " + std::to_string(report.cap) + " or more characters are excluded (" +
               std::to_string(report.excluded_items) + " items).");
  }

  if (figures == 0) md << "No results found under `" << root.generic_string() << "`.\n\n";
  if (!missing.empty()) {
    md << "## Skipped inputs\n\n";
    for (const auto& m : missing) {
      md << "- `" << m << "`\n";
      err << "warning: missing " << m << ", skipped\n";
    }
  }
  fs::create_directories(root);
  std::ofstream f(root / "report.md", std::ios::binary);
  if (!f) throw IoError("cannot write " + (root / "report.md").string());
  f << md.str();
  out << "wrote " << (root / "report.md").string() << " (" << figures << " figures)\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"dcl4kt: knowledge tracing with difficulty-aware contrastive training"};
  app.require_subcommand(1);
  Common common;
  const char* env = std::getenv("DCL4KT_OUT");
  common.out = env && *env ? env : "out";

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset with texts");
  std::string synth_dir;
  add_common(synth, common);
  synth->add_option("--dir", synth_dir, "output directory (default <out>/synth)");
  add_keys(synth, common.flags, {"students", "questions", "concepts", "min_length", "max_length", "target_correct", "seed"});

  auto* prepare = app.add_subcommand("prepare", "split the log, build vocabularies and CTT difficulties");
  PrepareArgs pa;
  add_common(prepare, common);
  prepare->add_option("--input", pa.input, "interaction CSV/TSV")->required();
  prepare->add_option("--question-texts", pa.question_texts, "(id,text) file");
  prepare->add_option("--concept-texts", pa.concept_texts, "(id,text) file");
  prepare->add_option("--dir", pa.dir, "artifact directory (default <out>/prepared)");
  prepare->add_option("--user-col", pa.columns.student);
  prepare->add_option("--question-col", pa.columns.question);
  prepare->add_option("--concept-col", pa.columns.kc);
  prepare->add_option("--response-col", pa.columns.response);
  prepare->add_option("--timestamp-col", pa.columns.timestamp);
  prepare->add_option("--concept-separator", pa.columns.concept_separator);
  add_keys(prepare, common.flags, kSplitKeys);

  auto* train_cmd = app.add_subcommand("train", "train and score on the test split");
  TrainArgs ta;
  add_common(train_cmd, common);
  train_cmd->add_option("--prepared", ta.prepared, "prepared artifact directory");
  train_cmd->add_option("--difficulty", ta.difficulty, "difficulty table (default: training CTT)");
  train_cmd->add_option("--run-name", ta.run_name, "subdirectory under <out>/runs");
  train_cmd->add_option("--dump-augmented", ta.dump_augmented, "write the first batch's augmented views to this CSV");
  add_keys(train_cmd, common.flags, kModelKeys);
  add_keys(train_cmd, common.flags, kTrainKeys);
  add_switches(train_cmd, common.flags, kTrainSwitches);

  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint");
  EvalArgs ea;
  add_common(eval_cmd, common);
  eval_cmd->add_option("--prepared", ea.prepared);
  eval_cmd->add_option("--difficulty", ea.difficulty);
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "default <out>/runs/train/checkpoint.json");
  eval_cmd->add_option("--split", ea.split)->check(CLI::IsMember({"train", "valid", "test"}));
  eval_cmd->add_option("--metrics-out", ea.metrics_out);
  add_keys(eval_cmd, common.flags, {"batch_size", "fallback_positive", "fallback_negative"});

  auto* ablate = app.add_subcommand("ablate", "run an ablation");
  AblateArgs aa;
  add_common(ablate, common);
  ablate->add_option("which", aa.which, "diff-cl | lambda-sweep | augment-sweep | difficulty-prediction")
      ->required()
      ->check(CLI::IsMember({"diff-cl", "lambda-sweep", "augment-sweep", "difficulty-prediction"}));
  ablate->add_option("--prepared", aa.prepared);
  ablate->add_option("--seeds", aa.seeds, "comma-separated seed list");
  ablate->add_option("--grid", aa.grid, "lambda_c grid for lambda-sweep");
  ablate->add_option("--probs", aa.probs, "probabilities for augment-sweep");
  ablate->add_option("--unseen-frac", aa.unseen_frac, "share of questions hidden from train for diff-cl");
  ablate->add_option("--holdout-frac", aa.holdout_frac, "share of items held out for difficulty-prediction");
  add_keys(ablate, common.flags, kModelKeys);
  add_keys(ablate, common.flags, kTrainKeys);
  add_keys(ablate, common.flags, kTextKeys);
  add_switches(ablate, common.flags, kTrainSwitches);

  auto* predict = app.add_subcommand("predict-diff", "fit text models and fill difficulties of unseen items");
  PredictArgs pda;
  add_common(predict, common);
  predict->add_option("--prepared", pda.prepared);
  add_keys(predict, common.flags, kTextKeys);
  add_keys(predict, common.flags, {"seed"});

  auto* report = app.add_subcommand("report", "render report.md and figures from <out>");
  std::string report_prepared;
  add_common(report, common);
  report->add_option("--prepared", report_prepared);

  auto* cv = app.add_subcommand("cv", "k-fold cross-validation over all students");
  CvArgs ca;
  add_common(cv, common);
  cv->add_option("--prepared", ca.prepared);
  cv->add_option("--k", ca.k, "number of folds")->check(CLI::Range(2, 100));
  add_keys(cv, common.flags, kModelKeys);
  add_keys(cv, common.flags, kTrainKeys);
  add_keys(cv, common.flags, {"valid_frac"});
  add_switches(cv, common.flags, kTrainSwitches);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << e.what() << "\n" << "run with --help for usage\n";
    return kExitInput;
  }

  try {
    const Config cfg = common.resolve();
    if (synth->parsed()) return cmd_synth(common, cfg, synth_dir, out);
    if (prepare->parsed()) return cmd_prepare(common, cfg, pa, out);
    if (train_cmd->parsed()) return cmd_train(common, cfg, ta, out, err);
    if (eval_cmd->parsed()) return cmd_evaluate(common, cfg, ea, out);
    if (ablate->parsed()) return cmd_ablate(common, cfg, aa, out);
    if (predict->parsed()) return cmd_predict_diff(common, cfg, pda, out);
    if (report->parsed()) return cmd_report(common, report_prepared, out, err);
    if (cv->parsed()) return cmd_cv(common, cfg, ca, out);
  } catch (const MissingArtifactError& e) {
    err << "error: " << e.what() << "\n";
    return kExitMissingArtifact;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace dcl4kt
