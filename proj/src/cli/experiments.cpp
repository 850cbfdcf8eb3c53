#include "rodpo/cli/experiments.hpp"

#include <cmath>
#include <map>
#include <ostream>
#include <sstream>

namespace rodpo::cli {

namespace {

constexpr const char* kStrategies[] = {"random", "argmax", "topk"};

std::ostringstream csv_stream() {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(10);
  return os;
}

void metric_rows(std::ostringstream& os, const std::vector<SeedRun>& runs, const std::vector<std::string>& arms,
                 const std::vector<std::string>& labels) {
  for (std::size_t a = 0; a < arms.size(); ++a) {
    std::vector<double> nd, mr;
    for (const auto& r : runs) {
      const ArmResult& x = arms[a] == "warmup" ? r.sft : r.arm(arms[a]);
      nd.push_back(x.ndcg5);
      mr.push_back(x.mrr5);
    }
    const Summary n = summarize(nd), m = summarize(mr);
    os << labels[a] << ',' << n.mean << ',' << n.sd << ',' << m.mean << ',' << m.sd << ',' << runs.size() << '\n';
  }
}

}  // namespace

const ArmResult& SeedRun::arm(const std::string& name) const {
  for (const auto& a : arms) {
    if (a.arm == name) return a;
  }
  throw ContractError("no arm named '" + name + "' in seed run");
}

ArmResult evaluate_snapshot(const data::Dataset& data, const encoder::PolicySnapshot& snap, const std::string& arm) {
  const encoder::Encoder<float> model = encoder::restore_encoder(snap, data.catalog);
  const auto r = eval::evaluate(trainer::scorer_of(model), data.split, data::SplitPart::test, {5});
  ArmResult a;
  a.arm = arm;
  a.ndcg5 = r.ndcg.at(5);
  a.mrr5 = r.mrr.at(5);
  a.checksum = snap.checksum();
  return a;
}

std::vector<SeedRun> compare_sampling(const data::Dataset& data, const encoder::EncoderConfig& model,
                                      const trainer::TrainConfig& train, const std::vector<std::uint64_t>& seeds,
                                      const ComparisonOptions& opt) {
  if (seeds.empty()) throw ConfigError("compare-sampling needs at least one seed");
  std::vector<SeedRun> out;
  for (std::uint64_t seed : seeds) {
    trainer::TrainConfig cfg = train;
    cfg.seed = seed;
    SeedRun run;
    run.seed = seed;

    trainer::Trainer warm = trainer::Trainer::warmup(data, model, cfg);
    warm.run();
    const encoder::PolicySnapshot sft = warm.result();
    run.sft_checksum = sft.checksum();
    run.sft = evaluate_snapshot(data, sft, "warmup");
    run.sft.seed = seed;
    run.sft.epochs = warm.epoch();
    run.sft.valid_ndcg5 = warm.epochs().back().ndcg5;
    const encoder::Encoder<float> sft_model = encoder::restore_encoder(sft, data.catalog);
    if (opt.distributions) {
      run.sft.hard_negative =
          eval::logit_distributions(trainer::scorer_of(sft_model), data.split, data::SplitPart::test, opt.bins)
              .hard_negative_stats;
    }
    if (opt.progress) *opt.progress << "seed " << seed << " warmup ndcg@5 " << run.sft.ndcg5 << std::endl;

    std::vector<std::string> arms(std::begin(kStrategies), std::end(kStrategies));
    if (opt.ce_baseline) arms.push_back("ce-only");
    for (const auto& arm : arms) {
      trainer::TrainConfig c = cfg;
      if (arm == "ce-only") {
        c.dpo.enabled = false;
      } else {
        c.dpo.enabled = true;
        c.dpo.strategy = preference::parse_strategy(arm);
      }
      trainer::Trainer t = trainer::Trainer::preference(data, sft, c);
      t.run();
      if (!t.reference() && c.dpo.enabled) throw ContractError("preference stage lost its reference policy");
      const encoder::PolicySnapshot best = t.result();
      ArmResult a = evaluate_snapshot(data, best, arm);
      a.seed = seed;
      a.epochs = t.epoch();
      a.valid_ndcg5 = t.best_metric().value_or(0.0);
      const encoder::Encoder<float> final_model = encoder::restore_encoder(best, data.catalog);
      const eval::Scorer scorer = trainer::scorer_of(final_model);
      if (data.truth && c.dpo.enabled) {
        a.suppression = eval::false_negative_suppression(t.trace(), *data.truth, data.split, &scorer);
      }
      if (opt.distributions && arm == "topk") {
        a.hard_negative = eval::logit_distributions(scorer, data.split, data::SplitPart::test, opt.bins).hard_negative_stats;
      }
      if (opt.progress) *opt.progress << "seed " << seed << ' ' << arm << " ndcg@5 " << a.ndcg5 << std::endl;
      run.arms.push_back(std::move(a));
    }
    out.push_back(std::move(run));
  }
  return out;
}

Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

std::string strategy_csv(const std::vector<SeedRun>& runs) {
  auto os = csv_stream();
  os << "strategy,ndcg5_mean,ndcg5_sd,mrr5_mean,mrr5_sd,seeds\n";
  const std::vector<std::string> arms(std::begin(kStrategies), std::end(kStrategies));
  metric_rows(os, runs, arms, arms);
  return os.str();
}

std::string ablation_csv(const std::vector<SeedRun>& runs) {
  auto os = csv_stream();
  os << "model,ndcg5_mean,ndcg5_sd,mrr5_mean,mrr5_sd,seeds\n";
  metric_rows(os, runs, {"warmup", "ce-only", "topk"}, {"warmup", "ce-only", "rodpo-topk"});
  return os.str();
}

std::string suppression_csv(const std::vector<SeedRun>& runs) {
  auto os = csv_stream();
  os << "strategy,seed,draws,false_negative_draws,fraction,expected_fraction,expected_sigma,max_repeat,"
        "mean_false_negative_rank\n";
  for (const auto& r : runs) {
    for (const auto& a : r.arms) {
      if (!a.suppression) continue;
      const auto& s = *a.suppression;
      os << a.arm << ',' << r.seed << ',' << s.draws << ',' << s.false_negative_draws << ',' << s.false_negative_fraction
         << ',' << s.expected_fraction << ',' << s.expected_sigma << ',' << s.max_repeat << ','
         << s.mean_false_negative_rank << '\n';
    }
  }
  return os.str();
}

std::string distribution_csv(const std::vector<SeedRun>& runs) {
  auto os = csv_stream();
  os << "seed,model,hard_negative_mean,hard_negative_variance,hard_negative_peak_density\n";
  for (const auto& r : runs) {
    for (const ArmResult* a : {&r.sft, &r.arm("topk")}) {
      if (!a->hard_negative) continue;
      os << r.seed << ',' << a->arm << ',' << a->hard_negative->mean << ',' << a->hard_negative->variance << ','
         << a->hard_negative->peak_density << '\n';
    }
  }
  return os.str();
}

}  // namespace rodpo::cli
