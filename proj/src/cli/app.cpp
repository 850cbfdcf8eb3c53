#include "rodpo/cli/app.hpp"

#include <unistd.h>

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rodpo/binary_io.hpp"
#include "rodpo/cli/experiments.hpp"
#include "rodpo/cli/manifest.hpp"
#include "rodpo/cli/run_config.hpp"
#include "rodpo/data/store.hpp"

namespace rodpo::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

/// Bad command line or missing input; maps to exit code 2.
struct UsageError : Error {
  using Error::Error;
};

std::vector<std::string> stage_streams(const std::vector<int>& stages) {
  std::vector<std::string> names = {"init"};
  for (int s : stages) {
    for (const char* what : {"shuffle", "moe-noise", "sampler"}) names.push_back("stage" + std::to_string(s) + "/" + what);
  }
  return names;
}

void require_exists(const fs::path& p, const std::string& what) {
  if (p.empty()) throw UsageError(what + " not given");
  if (!fs::exists(p)) throw UsageError(what + " not found: " + p.string());
}

// Builds a directory next to its final location and renames it into place
// on commit, so a failed command leaves nothing behind.
class StagedDir {
 public:
  explicit StagedDir(fs::path final) : final_(std::move(final)) {
    if (fs::exists(final_) && !(fs::is_directory(final_) && fs::is_empty(final_))) {
      throw UsageError("output already exists: " + final_.string());
    }
    tmp_ = final_;
    tmp_ += ".partial-" + std::to_string(::getpid());
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(tmp_, ec);
    }
  }
  const fs::path& path() const { return tmp_; }
  void commit() {
    if (fs::exists(final_)) fs::remove(final_);
    fs::rename(tmp_, final_);
    committed_ = true;
  }

 private:
  fs::path final_, tmp_;
  bool committed_ = false;
};

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& sets) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  apply_overrides(cfg, sets);
  cfg.validate();
  return cfg;
}

data::Dataset load_data(const fs::path& dir) {
  require_exists(dir, "dataset directory");
  return data::load_dataset(dir);
}

Manifest base_manifest(const std::string& command, const std::vector<std::string>& args) {
  Manifest m;
  m.command = command;
  m.argv = args;
  return m;
}

void save_checkpoint_atomic(const trainer::Trainer& t, const fs::path& path) {
  fs::path tmp = path;
  tmp += ".partial";
  t.save_checkpoint(tmp);
  fs::rename(tmp, path);
}

void save_snapshot_atomic(const encoder::PolicySnapshot& s, const fs::path& path) {
  fs::path tmp = path;
  tmp += ".partial";
  encoder::save_snapshot(tmp, s);
  fs::rename(tmp, path);
}

bool has_magic(const fs::path& path, const char (&magic)[9]) {
  std::ifstream in(path, std::ios::binary);
  char buf[8] = {};
  in.read(buf, 8);
  return in && std::equal(buf, buf + 8, magic);
}

/// Accepts a policy snapshot or a training checkpoint.
encoder::Encoder<float> load_model(const fs::path& path, const data::Dataset& d) {
  require_exists(path, "checkpoint");
  if (has_magic(path, "RODPOCK1")) return encoder::restore_encoder(trainer::Trainer::resume(d, path).result(), d.catalog);
  return encoder::restore_encoder(encoder::load_snapshot(path), d.catalog);
}

std::string trace_csv(const std::vector<eval::NegativeDraw>& trace) {
  std::ostringstream os;
  os << "epoch,step,user,target,loser\n";
  for (const auto& d : trace) os << d.epoch << ',' << d.step << ',' << d.user << ',' << d.target << ',' << d.loser << '\n';
  return os.str();
}

json report_json(const eval::EvalReport& r) { return json::parse(eval::to_json(r)); }

// Steps a trainer to completion, checkpointing at every epoch end.
void drive(trainer::Trainer& t, const fs::path& ckpt) {
  while (!t.done()) {
    const int before = t.epoch();
    t.step();
    if (t.epoch() != before) save_checkpoint_atomic(t, ckpt);
  }
}

// ---------------------------------------------------------------- commands

struct PreprocessArgs {
  std::string input, output, text, image;
  int kcore = 5;
  int max_seq_len = 50;
};

int cmd_preprocess(const PreprocessArgs& a, const std::vector<std::string>& argv, std::ostream& out,
                   std::ostream& err) {
  require_exists(a.input, "input");
  if (!a.text.empty()) require_exists(a.text, "text features");
  if (!a.image.empty()) require_exists(a.image, "image features");
  if (a.kcore < 1) throw UsageError("--kcore must be at least 1");
  if (a.max_seq_len < 1) throw UsageError("--max-seq-len must be at least 1");
  if (a.output.empty()) throw UsageError("--output not given");

  const data::RawInteractions raw = data::load_interactions(a.input);
  const data::RawInteractions core = data::kcore_filter(raw, a.kcore);
  data::SplitDataset split =
      data::leave_one_out_split(data::build_sequences(core), core.items.size(), a.max_seq_len);

  data::ItemCatalog cat;
  cat.n_items = split.n_items;
  auto align = [&](const std::string& path) {
    const Matrix<float> m = data::read_feature_matrix(path);
    if (m.rows() != raw.items.size()) {
      throw DataError(path + ": " + std::to_string(m.rows()) + " rows for " + std::to_string(raw.items.size()) +
                      " items in the input log");
    }
    Matrix<float> kept(core.items.size(), m.cols());
    for (int i = 0; i < core.items.size(); ++i) kept.row(i) = m.row(raw.items.find(core.items.key(i)));
    return kept;
  };
  if (!a.text.empty()) cat.text = align(a.text);
  if (!a.image.empty()) cat.image = align(a.image);

  StagedDir dir(a.output);
  Manifest m = base_manifest("preprocess", argv);
  m.config = {{"kcore", std::to_string(a.kcore)}, {"max_seq_len", std::to_string(a.max_seq_len)}};
  m.inputs[a.input] = sha1_file(a.input);
  if (!a.text.empty()) m.inputs[a.text] = sha1_file(a.text);
  if (!a.image.empty()) m.inputs[a.image] = sha1_file(a.image);
  m.artifacts = {data::files::split, data::files::user_map, data::files::item_map, data::files::stats};
  m.extra["records_in"] = raw.records.size();
  m.extra["records_kept"] = core.records.size();
  m.extra["duplicates_dropped"] = raw.duplicates_dropped;
  write_manifest(dir.path() / "manifest.json", m);

  data::save_dataset(dir.path(), split, cat);
  data::write_id_map(dir.path() / data::files::user_map, core.users);
  data::write_id_map(dir.path() / data::files::item_map, core.items);
  dir.commit();
  if (split.dropped_users) err << "dropped " << split.dropped_users << " user(s) with fewer than 3 interactions\n";
  out << data::stats_json(data::dataset_stats(split)) << '\n';
  return ok;
}

struct SynthArgs {
  data::SyntheticConfig cfg;
  std::string output;
};

int cmd_synth(const SynthArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  if (a.output.empty()) throw UsageError("--output not given");
  const data::SyntheticDataset ds = data::generate_synthetic(a.cfg);
  StagedDir dir(a.output);
  Manifest m = base_manifest("synth", argv);
  const auto& c = a.cfg;
  m.config = {{"users", std::to_string(c.n_users)},
              {"items", std::to_string(c.n_items)},
              {"latent_dim", std::to_string(c.latent_dim)},
              {"seq_len_mean", std::to_string(c.seq_len_mean)},
              {"exposure_rate", std::to_string(c.exposure_rate)},
              {"popularity_exposure", c.popularity_exposure ? "true" : "false"},
              {"text_dim", std::to_string(c.text_dim)},
              {"image_dim", std::to_string(c.image_dim)},
              {"max_seq_len", std::to_string(c.max_seq_len)}};
  m.seeds = stream_seeds(c.seed, {"synth/latent", "synth/exposure", "synth/sequence", "synth/features"});
  m.artifacts = {data::files::split,   data::files::text,     data::files::image,
                 data::files::utility, data::files::exposure, data::files::false_negatives,
                 data::files::interactions, data::files::stats};
  m.extra["mean_false_negatives"] = ds.truth.mean_false_negatives();
  write_manifest(dir.path() / "manifest.json", m);
  data::save_synthetic(dir.path(), ds);
  dir.commit();
  out << data::stats_json(data::dataset_stats(ds.split)) << '\n';
  return ok;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string strategy;
  std::string stage = "both";
  std::string resume;
  std::string sft;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunConfig cfg = resolve_config(a.config, a.sets);
  if (!a.strategy.empty()) cfg.train.dpo.strategy = preference::parse_strategy(a.strategy);
  if (a.stage != "1" && a.stage != "2" && a.stage != "both") throw UsageError("--stage must be 1, 2 or both");
  const bool run1 = a.stage != "2", run2 = a.stage != "1";
  if (!a.resume.empty()) require_exists(a.resume, "checkpoint to resume");
  const fs::path outdir = cfg.output_dir;
  const fs::path sft_path = a.sft.empty() ? outdir / "sft.snapshot" : fs::path(a.sft);
  if (!run1 && a.resume.empty()) require_exists(sft_path, "warm-up snapshot");
  const data::Dataset d = load_data(cfg.data_dir);

  fs::create_directories(outdir);
  Manifest m = base_manifest("train", argv);
  m.config = cfg.entries();
  m.inputs[cfg.data_dir.string()] = sha1_tree(cfg.data_dir);
  if (!run1 && a.resume.empty()) m.inputs[sft_path.string()] = sha1_file(sft_path);
  if (!a.resume.empty()) m.inputs[a.resume] = sha1_file(a.resume);
  m.seeds = stream_seeds(cfg.train.seed, stage_streams({1, 2}));
  if (run1) m.artifacts.insert(m.artifacts.end(), {"stage1.ckpt", "sft.snapshot"});
  if (run2) m.artifacts.insert(m.artifacts.end(), {"stage2.ckpt", "policy.snapshot", "negatives.csv"});
  m.artifacts.insert(m.artifacts.end(), {"metrics.jsonl", "report.json"});
  m.extra["stage"] = a.stage;
  write_manifest(outdir / "manifest.json", m);

  const bool fresh_log = a.resume.empty() && run1;
  std::ofstream log(outdir / "metrics.jsonl", fresh_log ? std::ios::trunc : std::ios::app);
  if (!log) throw DataError("cannot write metrics log in " + outdir.string());
  json report;

  std::optional<trainer::Trainer> resumed;
  if (!a.resume.empty()) resumed.emplace(trainer::Trainer::resume(d, a.resume));

  auto prepare = [&](trainer::Trainer& t) {
    t.set_metrics_log(&log);
    t.set_quiet(a.quiet);
  };

  std::optional<encoder::PolicySnapshot> sft;
  const bool resume_stage2 = resumed && resumed->stage() == trainer::Stage::preference;
  if (run1 && !resume_stage2) {
    trainer::Trainer t = resumed ? std::move(*resumed) : trainer::Trainer::warmup(d, cfg.model, cfg.train);
    resumed.reset();
    prepare(t);
    drive(t, outdir / "stage1.ckpt");
    sft = t.result();
    save_snapshot_atomic(*sft, outdir / "sft.snapshot");
    const auto r = eval::evaluate(trainer::scorer_of(t.policy()), d.split, data::SplitPart::test, cfg.ks,
                                  cfg.train.eval_batch_size);
    report["warmup"] = report_json(r);
    report["warmup"]["checksum"] = sft->checksum();
    out << "stage 1 done: " << t.epoch() << " epochs, test ndcg@" << cfg.ks.front() << " "
        << r.ndcg.at(cfg.ks.front()) << '\n';
  }
  if (run2) {
    std::optional<trainer::Trainer> t;
    if (resume_stage2) {
      t.emplace(std::move(*resumed));
    } else {
      if (!sft) sft = encoder::load_snapshot(sft_path);
      t.emplace(trainer::Trainer::preference(d, *sft, cfg.train));
    }
    prepare(*t);
    drive(*t, outdir / "stage2.ckpt");
    const encoder::PolicySnapshot best = t->result();
    save_snapshot_atomic(best, outdir / "policy.snapshot");
    write_file_atomic(outdir / "negatives.csv", trace_csv(t->trace()));
    const encoder::Encoder<float> model = encoder::restore_encoder(best, d.catalog);
    const auto r = eval::evaluate(trainer::scorer_of(model), d.split, data::SplitPart::test, cfg.ks,
                                  cfg.train.eval_batch_size);
    report["policy"] = report_json(r);
    report["policy"]["checksum"] = best.checksum();
    if (t->reference()) report["reference_checksum"] = t->reference()->checksum();
    if (t->best_metric()) report["best_valid_ndcg@5"] = *t->best_metric();
    out << "stage 2 done: " << t->epoch() << " epochs, test ndcg@" << cfg.ks.front() << " "
        << r.ndcg.at(cfg.ks.front()) << ", checksum " << best.checksum() << '\n';
  }
  write_file_atomic(outdir / "report.json", report.dump(2) + "\n");
  return ok;
}

struct EvalArgs {
  std::string checkpoint, data, split = "test", ks = "5,10", output;
  int batch = 256;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto part = data::parse_split_part(a.split);
  if (part == data::SplitPart::train) throw UsageError("--split must be valid or test");
  const auto ks = parse_int_list("--ks", a.ks);
  for (int k : ks) {
    if (k < 1) throw UsageError("--ks entries must be at least 1");
  }
  require_exists(a.checkpoint, "checkpoint");
  const data::Dataset d = load_data(a.data);
  const encoder::Encoder<float> model = load_model(a.checkpoint, d);
  const long long calls = trainer::ReferencePolicy::calls();
  const auto r = eval::evaluate(trainer::scorer_of(model), d.split, part, ks, a.batch);
  json j = report_json(r);
  j["reference_calls"] = trainer::ReferencePolicy::calls() - calls;
  if (!a.output.empty()) write_file_atomic(a.output, j.dump() + "\n");
  out << j.dump() << '\n';
  return ok;
}

struct CompareArgs {
  std::string config;
  std::vector<std::string> sets;
  int seeds = 5;
  bool no_baseline = false;
};

int cmd_compare(const CompareArgs& a, const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  RunConfig cfg = resolve_config(a.config, a.sets);
  if (a.seeds < 1) throw UsageError("--seeds must be at least 1");
  const data::Dataset d = load_data(cfg.data_dir);
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < a.seeds; ++i) seeds.push_back(cfg.train.seed + static_cast<std::uint64_t>(i));

  const fs::path outdir = cfg.output_dir;
  fs::create_directories(outdir);
  Manifest m = base_manifest("compare-sampling", argv);
  m.config = cfg.entries();
  m.inputs[cfg.data_dir.string()] = sha1_tree(cfg.data_dir);
  for (auto s : seeds) m.seeds[std::to_string(s)] = stream_seeds(s, stage_streams({1, 2}));
  m.artifacts = {"strategy.csv", "ablation.csv", "suppression.csv", "distribution.csv", "runs.json"};
  write_manifest(outdir / "manifest.json", m);

  ComparisonOptions opt;
  opt.ce_baseline = !a.no_baseline;
  opt.bins = cfg.bins;
  opt.progress = &err;
  const auto runs = compare_sampling(d, cfg.model, cfg.train, seeds, opt);

  json detail = json::array();
  for (const auto& r : runs) {
    json s;
    s["seed"] = r.seed;
    s["sft_checksum"] = r.sft_checksum;
    auto arm_json = [](const ArmResult& x) {
      json j{{"arm", x.arm},
             {"ndcg@5", x.ndcg5},
             {"mrr@5", x.mrr5},
             {"valid_ndcg@5", x.valid_ndcg5},
             {"epochs", x.epochs},
             {"checksum", x.checksum}};
      if (x.suppression) j["suppression"] = json::parse(eval::to_json(*x.suppression));
      if (x.hard_negative) j["hard_negative_peak_density"] = x.hard_negative->peak_density;
      return j;
    };
    s["arms"] = json::array({arm_json(r.sft)});
    for (const auto& x : r.arms) s["arms"].push_back(arm_json(x));
    detail.push_back(s);
  }
  write_file_atomic(outdir / "strategy.csv", strategy_csv(runs));
  if (opt.ce_baseline) write_file_atomic(outdir / "ablation.csv", ablation_csv(runs));
  write_file_atomic(outdir / "suppression.csv", suppression_csv(runs));
  write_file_atomic(outdir / "distribution.csv", distribution_csv(runs));
  write_file_atomic(outdir / "runs.json", detail.dump(2) + "\n");
  out << strategy_csv(runs);
  return ok;
}

struct SweepArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string param;
  std::string values;
};

int cmd_sweep(const SweepArgs& a, const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  RunConfig cfg = resolve_config(a.config, a.sets);
  if (a.param != "K" && a.param != "beta") throw UsageError("--param must be K or beta");
  const auto values = parse_double_list("--values", a.values);
  std::vector<trainer::TrainConfig> grid;
  for (double v : values) {
    trainer::TrainConfig c = cfg.train;
    if (a.param == "K") {
      if (v != std::floor(v)) throw UsageError("--values for K must be integers");
      c.dpo.k = static_cast<int>(v);
    } else {
      c.dpo.beta = v;
    }
    c.dpo.enabled = true;
    c.validate();
    grid.push_back(c);
  }
  const data::Dataset d = load_data(cfg.data_dir);
  const fs::path outdir = cfg.output_dir;
  fs::create_directories(outdir);
  Manifest m = base_manifest("sweep", argv);
  m.config = cfg.entries();
  m.inputs[cfg.data_dir.string()] = sha1_tree(cfg.data_dir);
  m.seeds = stream_seeds(cfg.train.seed, stage_streams({1, 2}));
  m.artifacts = {"sft.snapshot", "sweep.csv"};
  m.extra["param"] = a.param;
  m.extra["values"] = values;
  write_manifest(outdir / "manifest.json", m);

  trainer::Trainer warm = trainer::Trainer::warmup(d, cfg.model, cfg.train);
  warm.run();
  const encoder::PolicySnapshot sft = warm.result();
  save_snapshot_atomic(sft, outdir / "sft.snapshot");
  m.extra["sft_checksum"] = sft.checksum();
  write_manifest(outdir / "manifest.json", m);
  err << "warm-up done, checksum " << sft.checksum() << '\n';

  std::ostringstream csv;
  csv.imbue(std::locale::classic());
  csv.precision(10);
  csv << "param,value,ndcg5,mrr5,best_valid_ndcg5,epochs,sft_checksum\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    trainer::Trainer t = trainer::Trainer::preference(d, sft, grid[i]);
    t.run();
    const ArmResult r = evaluate_snapshot(d, t.result(), a.param);
    csv << a.param << ',' << values[i] << ',' << r.ndcg5 << ',' << r.mrr5 << ',' << t.best_metric().value_or(0) << ','
        << t.epoch() << ',' << sft.checksum() << '\n';
    err << a.param << '=' << values[i] << " ndcg@5 " << r.ndcg5 << '\n';
  }
  write_file_atomic(outdir / "sweep.csv", csv.str());
  out << csv.str();
  return ok;
}

struct ExportArgs {
  std::string checkpoint, data, output, split = "test";
  int bins = 100;
};

int cmd_export(const ExportArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const auto part = data::parse_split_part(a.split);
  if (part == data::SplitPart::train) throw UsageError("--split must be valid or test");
  if (a.bins < 10) throw UsageError("--bins must be at least 10");
  if (a.output.empty()) throw UsageError("--output not given");
  require_exists(a.checkpoint, "checkpoint");
  const data::Dataset d = load_data(a.data);
  const encoder::Encoder<float> model = load_model(a.checkpoint, d);
  const auto dist = eval::logit_distributions(trainer::scorer_of(model), d.split, part, a.bins);

  const fs::path outdir = a.output;
  fs::create_directories(outdir);
  Manifest m = base_manifest("export-dist", argv);
  m.config = {{"split", a.split}, {"bins", std::to_string(a.bins)}};
  m.inputs[a.checkpoint] = sha1_file(a.checkpoint);
  m.inputs[a.data] = sha1_tree(a.data);
  m.artifacts = {"histogram.csv", "logits.csv", "distribution.json"};
  write_manifest(outdir / "manifest.json", m);
  write_file_atomic(outdir / "histogram.csv", eval::histogram_csv(dist.histogram));
  write_file_atomic(outdir / "logits.csv", eval::raw_logits_csv(dist));
  write_file_atomic(outdir / "distribution.json", eval::to_json(dist) + "\n");
  out << eval::to_json(dist) << '\n';
  return ok;
}

struct EfficiencyArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string checkpoint;
  int iterations = 20;
};

int cmd_efficiency(const EfficiencyArgs& a, std::ostream& out) {
  RunConfig cfg = resolve_config(a.config, a.sets);
  if (a.iterations < 1) throw UsageError("--iterations must be positive");
  const data::Dataset d = load_data(cfg.data_dir);
  encoder::PolicySnapshot snap;
  if (a.checkpoint.empty()) {
    snap = encoder::make_snapshot(encoder::Encoder<float>(cfg.model, d.catalog, cfg.train.seed));
  } else {
    require_exists(a.checkpoint, "checkpoint");
    snap = encoder::load_snapshot(a.checkpoint);
  }
  const auto r = trainer::measure_efficiency(d, snap, cfg.train, a.iterations);
  out << trainer::to_json(r) << '\n';
  return ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Preference-optimized multimodal sequential recommendation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "k-core filter, split and summarize an interaction log");
  c_pre->add_option("--input", pre.input, "tab-separated user, item, timestamp log")->required();
  c_pre->add_option("--output", pre.output, "dataset directory to create")->required();
  c_pre->add_option("--kcore", pre.kcore, "minimum interactions per user and item")->capture_default_str();
  c_pre->add_option("--max-seq-len", pre.max_seq_len, "context window")->capture_default_str();
  c_pre->add_option("--text-features", pre.text, "feature matrix aligned with the log's item order");
  c_pre->add_option("--image-features", pre.image, "feature matrix aligned with the log's item order");

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "generate a synthetic dataset with planted false negatives");
  c_syn->add_option("--users", syn.cfg.n_users)->capture_default_str();
  c_syn->add_option("--items", syn.cfg.n_items)->capture_default_str();
  c_syn->add_option("--exposure-rate", syn.cfg.exposure_rate)->capture_default_str();
  c_syn->add_option("--seed", syn.cfg.seed)->capture_default_str();
  c_syn->add_option("--latent-dim", syn.cfg.latent_dim)->capture_default_str();
  c_syn->add_option("--seq-len-mean", syn.cfg.seq_len_mean)->capture_default_str();
  c_syn->add_option("--text-dim", syn.cfg.text_dim)->capture_default_str();
  c_syn->add_option("--image-dim", syn.cfg.image_dim)->capture_default_str();
  c_syn->add_option("--max-seq-len", syn.cfg.max_seq_len)->capture_default_str();
  c_syn->add_flag("--popularity-exposure", syn.cfg.popularity_exposure, "scale exposure by item popularity");
  c_syn->add_option("--output", syn.output)->required();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "run the warm-up and/or preference stage");
  c_tr->add_option("--config", tr.config, "run configuration file");
  c_tr->add_option("--set", tr.sets, "override key=value (repeatable)");
  c_tr->add_option("--strategy", tr.strategy, "random, argmax or topk");
  c_tr->add_option("--stage", tr.stage, "1, 2 or both")->capture_default_str();
  c_tr->add_option("--resume", tr.resume, "checkpoint to continue from");
  c_tr->add_option("--sft", tr.sft, "warm-up snapshot for --stage=2 (default: <output>/sft.snapshot)");
  c_tr->add_flag("--quiet", tr.quiet, "no per-epoch lines on stderr");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "rank held-out items with a trained policy");
  c_ev->add_option("--checkpoint", ev.checkpoint, "policy snapshot or training checkpoint")->required();
  c_ev->add_option("--data", ev.data, "dataset directory")->required();
  c_ev->add_option("--split", ev.split, "valid or test")->capture_default_str();
  c_ev->add_option("--ks", ev.ks, "comma-separated cutoffs")->capture_default_str();
  c_ev->add_option("--batch", ev.batch)->capture_default_str();
  c_ev->add_option("--output", ev.output, "also write the report here");

  CompareArgs cmp;
  auto* c_cmp = app.add_subcommand("compare-sampling", "all sampling strategies over several seeds");
  c_cmp->add_option("--config", cmp.config);
  c_cmp->add_option("--set", cmp.sets);
  c_cmp->add_option("--seeds", cmp.seeds, "replicates, seeds run.seed .. run.seed+N-1")->capture_default_str();
  c_cmp->add_flag("--no-baseline", cmp.no_baseline, "skip the cross-entropy-only arm");

  SweepArgs sw;
  auto* c_sw = app.add_subcommand("sweep", "preference-stage grid over K or beta from one warm-up policy");
  c_sw->add_option("--config", sw.config);
  c_sw->add_option("--set", sw.sets);
  c_sw->add_option("--param", sw.param, "K or beta")->required();
  c_sw->add_option("--values", sw.values, "comma-separated values")->required();

  ExportArgs ex;
  auto* c_ex = app.add_subcommand("export-dist", "positive and hard-negative logit histograms");
  c_ex->add_option("--checkpoint", ex.checkpoint)->required();
  c_ex->add_option("--data", ex.data)->required();
  c_ex->add_option("--bins", ex.bins)->capture_default_str();
  c_ex->add_option("--split", ex.split)->capture_default_str();
  c_ex->add_option("--output", ex.output)->required();

  EfficiencyArgs ef;
  auto* c_ef = app.add_subcommand("efficiency", "step and inference timings");
  c_ef->add_option("--config", ef.config);
  c_ef->add_option("--set", ef.sets);
  c_ef->add_option("--checkpoint", ef.checkpoint, "policy snapshot (default: fresh initialization)");
  c_ef->add_option("--iterations", ef.iterations)->capture_default_str();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : usage;
  }

  try {
    if (*c_pre) return cmd_preprocess(pre, args, out, err);
    if (*c_syn) return cmd_synth(syn, args, out);
    if (*c_tr) return cmd_train(tr, args, out);
    if (*c_ev) return cmd_eval(ev, out);
    if (*c_cmp) return cmd_compare(cmp, args, out, err);
    if (*c_sw) return cmd_sweep(sw, args, out, err);
    if (*c_ex) return cmd_export(ex, args, out);
    if (*c_ef) return cmd_efficiency(ef, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return usage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return usage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return failure;
  }
  return usage;
}

}  // namespace rodpo::cli
