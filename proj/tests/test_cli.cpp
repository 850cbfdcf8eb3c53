#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rodpo/cli/app.hpp"
#include "rodpo/cli/manifest.hpp"
#include "rodpo/cli/run_config.hpp"
#include "rodpo/data/store.hpp"
#include "rodpo/encoder/snapshot.hpp"
#include "rodpo/trainer/trainer.hpp"

using namespace rodpo;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Sandbox {
  fs::path root;
  explicit Sandbox(const std::string& name) : root(fs::temp_directory_path() / ("rodpo_cli_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Sandbox() { fs::remove_all(root); }
  std::string operator()(const std::string& rel) const { return (root / rel).string(); }
};

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

// Small synthetic set and a matching fast configuration.
void small_setup(const Sandbox& sb, int users = 80, int items = 40) {
  const auto r = invoke({"synth", "--users", std::to_string(users), "--items", std::to_string(items), "--text-dim", "6",
                      "--image-dim", "5", "--max-seq-len", "20", "--seed", "2", "--output", sb("ds")});
  REQUIRE(r.code == 0);
  write(sb.root / "run.conf",
        "# small run\n[data]\ndir = " + sb("ds") +
            "\n[model]\ndim = 8\nlayers = 1\nmax_seq_len = 20\n[moe]\nexperts = 2\nactive_k = 1\n"
            "[train]\nstage1_epochs = 2\nstage2_max_epochs = 2\nbatch_size = 32\n[dpo]\nk = 5\n[run]\nseed = 4\n");
}

std::uint64_t snapshot_sum(const fs::path& p) { return encoder::load_snapshot(p).checksum(); }

}  // namespace

TEST_CASE("sha1 digests") {
  CHECK(cli::sha1_hex("abc", 3) == "a9993e364706816aba3e25717850c26c9cd0d89d");
  CHECK(cli::sha1_hex("", 0) == "da39a3ee5e6b4b0d3255bfef95601890afd80709");
}

TEST_CASE("run config defaults, sections, overrides and unknown keys") {
  const cli::RunConfig d;
  CHECK(d.model.dim == 64);
  CHECK(d.model.max_seq_len == 50);
  CHECK(d.model.moe.n_experts == 4);
  CHECK(d.model.moe.active_k == 2);
  CHECK(d.train.dpo.k == 50);
  CHECK(d.train.dpo.beta == 1.0);
  CHECK(d.train.learning_rate == 1e-3);
  CHECK(d.train.stage1_epochs == 15);

  auto c = cli::parse_run_config("[model]\ndim = 16  # narrow\n[dpo]\nstrategy = argmax\nbeta=0.5\neval.ks = 1,3\n");
  CHECK(c.model.dim == 16);
  CHECK(c.train.dpo.strategy == preference::Strategy::argmax);
  CHECK(c.train.dpo.beta == 0.5);
  CHECK(c.ks == std::vector<int>{1, 3});
  cli::apply_overrides(c, {"model.dim=24", "run.seed=9"});
  CHECK(c.model.dim == 24);
  CHECK(c.train.seed == 9);

  const auto back = cli::parse_run_config(cli::to_text(c));
  CHECK(back.entries() == c.entries());

  CHECK_THROWS_AS(cli::parse_run_config("[model]\nwidth = 3\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("model.dim = wide\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("[model\n"), ConfigError);
  CHECK_THROWS_AS(cli::apply_overrides(c, {"nonsense"}), ConfigError);
}

TEST_CASE("preprocess a hand-counted log") {
  Sandbox sb("pre");
  std::string log = "# user item time\n";
  const char* rows[] = {"a x 1", "a y 2", "a z 3", "a w 4", "b x 1", "b y 5", "b v 6", "b u 7", "c z 2", "c w 3",
                        "c v 9", "c u 8", "d x 4", "d z 5", "d y 6", "d u 7", "e w 1", "e v 2", "e u 3", "e x 4"};
  for (const char* r : rows) {
    std::string s = r;
    for (char& ch : s) ch = ch == ' ' ? '\t' : ch;
    log += s + "\n";
  }
  write(sb.root / "log.tsv", log);

  const auto r = invoke({"preprocess", "--input", sb("log.tsv"), "--output", sb("out"), "--kcore", "1"});
  REQUIRE(r.code == 0);
  const json stats = json::parse(r.out);
  CHECK(stats["users"] == 5);
  CHECK(stats["items"] == 6);
  CHECK(stats["actions"] == 20);
  const json m = json::parse(slurp(sb.root / "out" / "manifest.json"));
  CHECK(m["records_in"] == 20);
  CHECK(m["records_kept"] == 20);
  CHECK(fs::exists(sb.root / "out" / data::files::item_map));
  const auto d = data::load_dataset(sb("out"));
  CHECK(d.split.n_users() == 5);

  SUBCASE("missing input leaves nothing behind") {
    const auto bad = invoke({"preprocess", "--input", sb("absent.tsv"), "--output", sb("none")});
    CHECK(bad.code == 2);
    CHECK_FALSE(fs::exists(sb.root / "none"));
  }
  SUBCASE("existing output is refused") {
    CHECK(invoke({"preprocess", "--input", sb("log.tsv"), "--output", sb("out"), "--kcore", "1"}).code == 2);
  }
}

TEST_CASE("synthetic generation is reproducible and honours full exposure") {
  Sandbox sb("synth");
  const std::vector<std::string> flags = {"synth", "--users", "50", "--items", "30", "--seed", "7"};
  auto a = flags, b = flags;
  a.insert(a.end(), {"--output", sb("a")});
  b.insert(b.end(), {"--output", sb("b")});
  REQUIRE(invoke(a).code == 0);
  REQUIRE(invoke(b).code == 0);
  for (const char* f : {data::files::split, data::files::text, data::files::image, data::files::utility,
                        data::files::exposure, data::files::false_negatives}) {
    CHECK(cli::sha1_file(sb.root / "a" / f) == cli::sha1_file(sb.root / "b" / f));
  }

  REQUIRE(invoke({"synth", "--users", "50", "--items", "30", "--exposure-rate", "1.0", "--output", sb("full")}).code == 0);
  const auto d = data::load_dataset(sb("full"));
  REQUIRE(d.truth.has_value());
  for (const auto& fn : d.truth->false_negatives) CHECK(fn.empty());

  CHECK(invoke({"synth", "--users", "50", "--exposure-rate", "0", "--output", sb("zero")}).code == 2);
  CHECK_FALSE(fs::exists(sb.root / "zero"));
}

TEST_CASE("default synthetic data loads without dropped users") {
  Sandbox sb("synth_default");
  REQUIRE(invoke({"synth", "--output", sb("d")}).code == 0);
  const auto d = data::load_dataset(sb("d"));
  CHECK(d.split.dropped_users == 0);
  CHECK(d.split.n_users() == 1000);
  CHECK(d.split.n_items == 500);
}

TEST_CASE("config and flag errors exit with code 2 and no artifacts") {
  Sandbox sb("errors");
  small_setup(sb);
  const auto r = invoke({"train", "--config", sb("run.conf"), "--set", "model.depth=3", "--set", "run.output=" + sb("o1")});
  CHECK(r.code == 2);
  CHECK(r.err.find("model.depth") != std::string::npos);
  CHECK_FALSE(fs::exists(sb.root / "o1"));
  CHECK(invoke({"train", "--config", sb("run.conf"), "--strategy", "best", "--set", "run.output=" + sb("o2")}).code == 2);
  CHECK_FALSE(fs::exists(sb.root / "o2"));
  CHECK(invoke({"compare-sampling", "--config", sb("run.conf"), "--seeds", "many"}).code == 2);
  CHECK(invoke({"eval", "--checkpoint", sb("missing.snapshot"), "--data", sb("ds")}).code == 2);
  CHECK(invoke({"frobnicate"}).code == 2);
  CHECK(invoke({}).code == 2);
}

TEST_CASE("train: staged runs equal a single run and top-1 equals argmax") {
  Sandbox sb("train");
  small_setup(sb);
  const std::string conf = sb("run.conf");

  REQUIRE(invoke({"train", "--config", conf, "--quiet", "--set", "run.output=" + sb("both")}).code == 0);
  REQUIRE(invoke({"train", "--config", conf, "--quiet", "--stage", "1", "--set", "run.output=" + sb("split")}).code == 0);
  REQUIRE(invoke({"train", "--config", conf, "--quiet", "--stage", "2", "--set", "run.output=" + sb("split")}).code == 0);
  CHECK(snapshot_sum(sb.root / "both" / "sft.snapshot") == snapshot_sum(sb.root / "split" / "sft.snapshot"));
  CHECK(snapshot_sum(sb.root / "both" / "policy.snapshot") == snapshot_sum(sb.root / "split" / "policy.snapshot"));
  CHECK(slurp(sb.root / "both" / "metrics.jsonl").size() > 0);

  const json m = json::parse(slurp(sb.root / "both" / "manifest.json"));
  CHECK(m["command"] == "train");
  CHECK(m["config"]["dpo.k"] == "5");
  CHECK(m["seeds"].contains("stage2/sampler"));

  REQUIRE(invoke({"train", "--config", conf, "--quiet", "--strategy", "topk", "--set", "dpo.k=1", "--set",
               "run.output=" + sb("top1")})
              .code == 0);
  REQUIRE(invoke({"train", "--config", conf, "--quiet", "--strategy", "argmax", "--set", "dpo.k=1", "--set",
               "run.output=" + sb("argmax")})
              .code == 0);
  CHECK(snapshot_sum(sb.root / "top1" / "policy.snapshot") == snapshot_sum(sb.root / "argmax" / "policy.snapshot"));
  CHECK(slurp(sb.root / "top1" / "negatives.csv") == slurp(sb.root / "argmax" / "negatives.csv"));

  SUBCASE("resuming from a stage-one checkpoint finishes the same run") {
    REQUIRE(invoke({"train", "--config", conf, "--quiet", "--resume", sb("split/stage1.ckpt"), "--set",
                 "run.output=" + sb("resumed")})
                .code == 0);
    CHECK(snapshot_sum(sb.root / "resumed" / "policy.snapshot") ==
          snapshot_sum(sb.root / "both" / "policy.snapshot"));
  }
  SUBCASE("manifest configuration reproduces the run") {
    const json man = json::parse(slurp(sb.root / "both" / "manifest.json"));
    std::string text;
    for (const auto& [k, v] : man["config"].items()) {
      if (k != "run.output") text += k + " = " + v.get<std::string>() + "\n";
    }
    write(sb.root / "again.conf", text);
    REQUIRE(invoke({"train", "--config", sb("again.conf"), "--quiet", "--set", "run.output=" + sb("again")}).code == 0);
    CHECK(snapshot_sum(sb.root / "again" / "policy.snapshot") == snapshot_sum(sb.root / "both" / "policy.snapshot"));
  }
}

TEST_CASE("eval matches the library and never touches a reference policy") {
  Sandbox sb("eval");
  small_setup(sb);
  REQUIRE(invoke({"train", "--config", sb("run.conf"), "--quiet", "--set", "run.output=" + sb("o")}).code == 0);
  const auto r = invoke({"eval", "--checkpoint", sb("o/policy.snapshot"), "--data", sb("ds"), "--ks", "5"});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j.contains("ndcg@5"));
  CHECK_FALSE(j.contains("ndcg@10"));
  CHECK(j["reference_calls"] == 0);

  const auto d = data::load_dataset(sb("ds"));
  const auto model = encoder::restore_encoder(encoder::load_snapshot(sb("o/policy.snapshot")), d.catalog);
  const auto lib = eval::evaluate(trainer::scorer_of(model), d.split, data::SplitPart::test, {5});
  CHECK(j["ndcg@5"].get<double>() == lib.ndcg.at(5));
  CHECK(j["mrr@5"].get<double>() == lib.mrr.at(5));

  const auto both = invoke({"eval", "--checkpoint", sb("o/sft.snapshot"), "--data", sb("ds"), "--split", "valid"});
  REQUIRE(both.code == 0);
  const json w = json::parse(both.out);
  CHECK(w["split"] == "valid");
  CHECK(w.contains("ndcg@10"));

  const auto ck = invoke({"eval", "--checkpoint", sb("o/stage2.ckpt"), "--data", sb("ds"), "--ks", "5"});
  REQUIRE(ck.code == 0);
  CHECK(json::parse(ck.out).contains("ndcg@5"));
}

TEST_CASE("training beats the untrained policy on validation") {
  Sandbox sb("learn");
  small_setup(sb, 300, 60);
  REQUIRE(invoke({"train", "--config", sb("run.conf"), "--quiet", "--set", "train.stage1_epochs=6", "--set",
               "run.output=" + sb("o")})
              .code == 0);
  const auto d = data::load_dataset(sb("ds"));
  const auto cfg = cli::load_run_config(sb("run.conf"));
  const encoder::Encoder<float> untrained(cfg.model, d.catalog, cfg.train.seed);
  const double before =
      eval::evaluate(trainer::scorer_of(untrained), d.split, data::SplitPart::valid, {5}).ndcg.at(5);
  const auto r = invoke({"eval", "--checkpoint", sb("o/policy.snapshot"), "--data", sb("ds"), "--split", "valid"});
  REQUIRE(r.code == 0);
  const double after = json::parse(r.out)["ndcg@5"].get<double>();
  INFO("untrained " << before << " trained " << after);
  CHECK(after > before);
}

TEST_CASE("compare-sampling writes three strategy rows reproducibly") {
  Sandbox sb("compare");
  small_setup(sb);
  const std::vector<std::string> base = {"compare-sampling", "--config", sb("run.conf"), "--seeds", "2"};
  auto a = base, b = base;
  a.insert(a.end(), {"--set", "run.output=" + sb("a")});
  b.insert(b.end(), {"--set", "run.output=" + sb("b")});
  const auto ra = invoke(a);
  REQUIRE(ra.code == 0);
  REQUIRE(invoke(b).code == 0);
  const std::string csv = slurp(sb.root / "a" / "strategy.csv");
  CHECK(csv == slurp(sb.root / "b" / "strategy.csv"));
  CHECK(csv == ra.out);
  std::istringstream in(csv);
  std::string line;
  std::vector<std::string> rows;
  std::getline(in, line);
  CHECK(line == "strategy,ndcg5_mean,ndcg5_sd,mrr5_mean,mrr5_sd,seeds");
  while (std::getline(in, line)) rows.push_back(line.substr(0, line.find(',')));
  CHECK(rows == std::vector<std::string>{"random", "argmax", "topk"});
  CHECK(slurp(sb.root / "a" / "suppression.csv") == slurp(sb.root / "b" / "suppression.csv"));
  CHECK(fs::exists(sb.root / "a" / "ablation.csv"));
}

TEST_CASE("sweeps share one warm-up policy") {
  Sandbox sb("sweep");
  small_setup(sb);
  auto rows_of = [&](const std::string& dir) {
    std::istringstream in(slurp(sb.root / dir / "sweep.csv"));
    std::string line;
    std::vector<std::string> rows;
    std::getline(in, line);
    while (std::getline(in, line)) rows.push_back(line);
    return rows;
  };
  REQUIRE(invoke({"sweep", "--config", sb("run.conf"), "--param", "K", "--values", "10,20,50,100", "--set",
               "run.output=" + sb("k")})
              .code == 0);
  REQUIRE(invoke({"sweep", "--config", sb("run.conf"), "--param", "beta", "--values", "0.1,0.5,1.0,2.0", "--set",
               "run.output=" + sb("beta")})
              .code == 0);
  const auto k = rows_of("k"), beta = rows_of("beta");
  CHECK(k.size() == 4);
  CHECK(beta.size() == 4);
  const json m = json::parse(slurp(sb.root / "k" / "manifest.json"));
  const std::string sum = std::to_string(m["sft_checksum"].get<std::uint64_t>());
  for (const auto& r : k) CHECK(r.substr(r.rfind(',') + 1) == sum);
  CHECK(json::parse(slurp(sb.root / "beta" / "manifest.json"))["sft_checksum"] == m["sft_checksum"]);
  CHECK(invoke({"sweep", "--config", sb("run.conf"), "--param", "gamma", "--values", "1"}).code == 2);
  CHECK(invoke({"sweep", "--config", sb("run.conf"), "--param", "K", "--values", "2.5"}).code == 2);
}

TEST_CASE("export-dist writes histogram and raw logits") {
  Sandbox sb("export");
  small_setup(sb);
  REQUIRE(invoke({"train", "--config", sb("run.conf"), "--quiet", "--stage", "1", "--set", "run.output=" + sb("o")}).code ==
          0);
  const auto r = invoke({"export-dist", "--checkpoint", sb("o/sft.snapshot"), "--data", sb("ds"), "--bins", "20",
                      "--output", sb("dist")});
  REQUIRE(r.code == 0);
  const std::string h = slurp(sb.root / "dist" / "histogram.csv");
  CHECK(h.rfind("bin_low,bin_high,count_pos,count_hardneg\n", 0) == 0);
  CHECK(std::count(h.begin(), h.end(), '\n') == 21);
  const std::string raw = slurp(sb.root / "dist" / "logits.csv");
  CHECK(std::count(raw.begin(), raw.end(), '\n') == 81);
  CHECK(json::parse(r.out)["bins"] == 20);
}

TEST_CASE("efficiency command reports timings without reference passes at inference") {
  Sandbox sb("eff");
  small_setup(sb);
  const auto r = invoke({"efficiency", "--config", sb("run.conf"), "--iterations", "3"});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["reference_calls_during_inference"] == 0);
  CHECK(j["ce_step_ms"].get<double>() > 0);
}
