#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rodpo/trainer/trainer.hpp"
#include "trainer_fixture.hpp"

using namespace rodpo;
using namespace rodpo::trainer;
using rodpo::testing::small_dataset;
using rodpo::testing::small_model;
using rodpo::testing::small_train;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("rodpo_test_" + name);
}

encoder::PolicySnapshot warm(const data::Dataset& d, encoder::EncoderConfig m = small_model(),
                             TrainConfig c = small_train()) {
  c.stage1_epochs = 1;
  Trainer t = Trainer::warmup(d, m, c);
  t.run();
  return t.result();
}

void step_n(Trainer& t, int n) {
  for (int i = 0; i < n; ++i) t.step();
}

}  // namespace

TEST_CASE("adam matches a scalar reference implementation") {
  ParameterSet<double> p;
  p.add("w", Matrix<double>::Constant(1, 1, 1.0));
  AdamHyper h{0.1, 0.9, 0.999, 1e-8};
  Adam<double> opt(p, h);
  double w = 1.0, m = 0, v = 0;
  for (int t = 1; t <= 20; ++t) {
    p[0].grad(0, 0) = 2 * p[0].value(0, 0);
    opt.step(p);
    const double g = 2 * w;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    CHECK(p[0].value(0, 0) == doctest::Approx(w).epsilon(1e-12));
    if (t == 1) CHECK(p[0].value(0, 0) == doctest::Approx(0.9).epsilon(1e-7));
  }
  CHECK(std::abs(p[0].value(0, 0)) < 1.0);
  CHECK(opt.steps() == 20);
}

TEST_CASE("adam leaves parameters alone under a zero gradient") {
  ParameterSet<float> p;
  p.add("a", Matrix<float>::Constant(2, 3, 0.5f));
  p.add("b", Matrix<float>::Constant(1, 4, -1.5f));
  const auto before = p.checksum();
  Adam<float> opt(p, AdamHyper{});
  for (int i = 0; i < 3; ++i) {
    p.zero_grad();
    opt.step(p);
  }
  CHECK(p.checksum() == before);
}

TEST_CASE("adam refuses non-finite gradients") {
  ParameterSet<float> p;
  p.add("a", Matrix<float>::Zero(1, 2));
  Adam<float> opt(p, AdamHyper{});
  p[0].grad(0, 1) = std::nanf("");
  CHECK_THROWS_AS(opt.step(p), TrainingError);
}

TEST_CASE("global norm clipping") {
  ParameterSet<double> p;
  p.add("a", Matrix<double>::Zero(1, 2));
  p.add("b", Matrix<double>::Zero(1, 1));
  p[0].grad << 3, 0;
  p[1].grad << 4;
  CHECK(clip_global_norm(p, 10.0) == doctest::Approx(5.0));
  CHECK(p[0].grad(0, 0) == 3);
  CHECK(clip_global_norm(p, 1.0) == doctest::Approx(5.0));
  CHECK(p[0].grad(0, 0) == doctest::Approx(0.6));
  CHECK(p[1].grad(0, 0) == doctest::Approx(0.8));
}

TEST_CASE("warm-up cross-entropy falls over the first epochs") {
  const auto d = small_dataset();
  auto c = small_train();
  c.stage1_epochs = 5;
  Trainer t = Trainer::warmup(d, small_model(), c);
  t.run();
  REQUIRE(t.epochs().size() == 5);
  CHECK(t.epochs().back().loss_ce < t.epochs().front().loss_ce);
  for (const auto& e : t.epochs()) CHECK(e.loss_dpo == 0);
  CHECK(t.reference() == nullptr);
  CHECK(t.trace().empty());
}

TEST_CASE("same seed gives bit-identical training, another seed does not") {
  const auto d = small_dataset();
  auto run = [&](std::uint64_t seed) {
    auto c = small_train();
    c.seed = seed;
    Trainer t = Trainer::warmup(d, small_model(), c);
    t.run();
    return t.policy().params().checksum();
  };
  CHECK(run(7) == run(7));
  CHECK(run(7) != run(8));
}

TEST_CASE("zero preference weight equals plain continued cross-entropy") {
  const auto d = small_dataset();
  const auto sft = warm(d);
  auto c = small_train();
  c.dpo.lambda = 0;
  Trainer a = Trainer::preference(d, sft, c);
  c.dpo.enabled = false;
  Trainer b = Trainer::preference(d, sft, c);
  step_n(a, 12);
  step_n(b, 12);
  CHECK(a.policy().params().checksum() == b.policy().params().checksum());
  CHECK(a.reference() != nullptr);
  CHECK(b.reference() == nullptr);
}

TEST_CASE("the reference policy never moves") {
  const auto d = small_dataset();
  const auto sft = warm(d);
  Trainer t = Trainer::preference(d, sft, small_train());
  t.run();
  REQUIRE(t.reference() != nullptr);
  CHECK(t.reference()->checksum() == sft.checksum());
  CHECK(t.policy().params().checksum() != sft.checksum());
}

TEST_CASE("total loss is cross-entropy plus weighted preference loss") {
  const auto d = small_dataset();
  auto m = small_model();
  m.moe.noise = false;
  const auto sft = warm(d, m);
  auto c = small_train();
  c.dpo.lambda = 0.7;
  Trainer t = Trainer::preference(d, sft, c);
  const StepRecord first = t.step();
  CHECK(first.loss_dpo == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  step_n(t, 5);
  for (const auto& s : t.steps()) {
    CHECK(s.stage == 2);
    CHECK(std::abs(s.loss_total - (s.loss_ce + 0.7 * s.loss_dpo)) < 1e-6 * std::max(1.0, s.loss_total));
  }
}

TEST_CASE("negative trace records one loser per example") {
  const auto d = small_dataset();
  const auto sft = warm(d);
  Trainer t = Trainer::preference(d, sft, small_train());
  step_n(t, 3);
  const auto& tr = t.trace();
  CHECK(tr.size() == 3 * 32);
  for (const auto& x : tr) {
    CHECK(x.loser != x.target);
    CHECK(x.loser >= 0);
    CHECK(x.loser < d.split.n_items);
    CHECK(x.epoch == 1);
  }
  CHECK(tr.front().step == 1);
  CHECK(tr.back().step == 3);
}

TEST_CASE("top-k with a pool of one follows the argmax trajectory") {
  const auto d = small_dataset();
  const auto sft = warm(d);
  auto c = small_train();
  c.dpo.k = 1;
  c.dpo.strategy = preference::Strategy::topk;
  Trainer a = Trainer::preference(d, sft, c);
  c.dpo.strategy = preference::Strategy::argmax;
  Trainer b = Trainer::preference(d, sft, c);
  step_n(a, 8);
  step_n(b, 8);
  CHECK(a.policy().params().checksum() == b.policy().params().checksum());
  REQUIRE(a.trace().size() == b.trace().size());
  for (std::size_t i = 0; i < a.trace().size(); ++i) CHECK(a.trace()[i].loser == b.trace()[i].loser);
}

TEST_CASE("checkpoint resume reproduces uninterrupted training") {
  const auto d = small_dataset();
  const auto sft = warm(d);
  const auto path = temp_file("resume.ckpt");

  SUBCASE("warm-up") {
    auto c = small_train();
    c.stage1_epochs = 3;
    Trainer full = Trainer::warmup(d, small_model(), c);
    step_n(full, 20);
    Trainer half = Trainer::warmup(d, small_model(), c);
    step_n(half, 10);
    half.save_checkpoint(path);
    Trainer resumed = Trainer::resume(d, path);
    step_n(resumed, 10);
    CHECK(resumed.policy().params().checksum() == full.policy().params().checksum());
    CHECK(resumed.step_count() == 20);
    CHECK(resumed.epoch() == full.epoch());
  }
  SUBCASE("preference") {
    auto c = small_train();
    c.stage2_max_epochs = 3;
    Trainer full = Trainer::preference(d, sft, c);
    step_n(full, 20);
    Trainer half = Trainer::preference(d, sft, c);
    step_n(half, 10);
    half.save_checkpoint(path);
    Trainer resumed = Trainer::resume(d, path);
    step_n(resumed, 10);
    CHECK(resumed.policy().params().checksum() == full.policy().params().checksum());
    CHECK(resumed.best_metric() == full.best_metric());
    REQUIRE(resumed.reference() != nullptr);
    CHECK(resumed.reference()->checksum() == sft.checksum());
    CHECK(resumed.result().checksum() == full.result().checksum());
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loading rejects foreign files") {
  const auto d = small_dataset();
  const auto path = temp_file("bad.ckpt");
  std::ofstream(path) << "not a checkpoint";
  CHECK_THROWS_AS(Trainer::resume(d, path), DataError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(Trainer::resume(d, path), DataError);
}

TEST_CASE("early stopping waits exactly the patience") {
  const auto d = small_dataset();
  const auto sft = warm(d);
  auto c = small_train();
  c.learning_rate = 1e-30;
  c.stage2_max_epochs = 20;
  c.patience = 3;
  Trainer t = Trainer::preference(d, sft, c);
  t.run();
  CHECK(t.epoch() == 4);
  REQUIRE(t.best_metric().has_value());
  double best = 0;
  for (const auto& e : t.epochs()) best = std::max(best, e.ndcg5);
  CHECK(*t.best_metric() == best);
}

TEST_CASE("stage two returns the best validation snapshot") {
  const auto d = small_dataset();
  const auto sft = warm(d);
  auto c = small_train();
  c.stage2_max_epochs = 4;
  Trainer t = Trainer::preference(d, sft, c);
  std::uint64_t best_sum = 0;
  double best = -1;
  while (!t.done()) {
    const int before = t.epoch();
    t.step();
    if (t.epoch() != before && t.epochs().back().ndcg5 > best) {
      best = t.epochs().back().ndcg5;
      best_sum = t.policy().params().checksum();
    }
  }
  CHECK(t.result().checksum() == best_sum);
}

TEST_CASE("epoch records are written as json lines") {
  const auto d = small_dataset();
  std::ostringstream log;
  Trainer t = Trainer::warmup(d, small_model(), small_train());
  t.set_metrics_log(&log);
  t.run();
  std::istringstream in(log.str());
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    CHECK(line.find("\"ndcg@5\"") != std::string::npos);
    CHECK(line.find("\"mrr@5\"") != std::string::npos);
    CHECK(line.find("\"stage\":1") != std::string::npos);
  }
  CHECK(n == 2);
}

TEST_CASE("training refuses impossible setups") {
  SUBCASE("no training examples") {
    data::Dataset d;
    d.split.n_items = 5;
    d.split.max_seq_len = 8;
    for (int u = 0; u < 4; ++u) d.split.users.push_back({u, {0, 1, 2}, {1, 2, 3}});
    d.catalog.n_items = 5;
    d.catalog.popularity.assign(5, 1);
    CHECK_THROWS_AS(Trainer::warmup(d, small_model(), small_train()), TrainingError);
  }
  SUBCASE("model window shorter than the data window") {
    const auto d = small_dataset();
    auto m = small_model();
    m.max_seq_len = 4;
    CHECK_THROWS_AS(Trainer::warmup(d, m, small_train()), ConfigError);
  }
  SUBCASE("stepping a finished stage") {
    const auto d = small_dataset();
    auto c = small_train();
    c.stage1_epochs = 1;
    Trainer t = Trainer::warmup(d, small_model(), c);
    t.run();
    CHECK_THROWS_AS(t.step(), ContractError);
  }
}

TEST_CASE("efficiency report counts no reference passes at inference") {
  const auto d = small_dataset();
  const auto sft = warm(d);
  const auto r = measure_efficiency(d, sft, small_train(), 3, 1);
  CHECK(r.reference_calls_during_inference == 0);
  CHECK(r.ce_step_ms > 0);
  CHECK(r.preference_step_ms > 0);
  CHECK(r.parameters == sft.params.count());
}
