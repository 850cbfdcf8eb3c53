#include "rodpo/trainer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "rodpo/binary_io.hpp"
#include "rodpo/preference/losses.hpp"

namespace rodpo::trainer {

using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr char kCheckpointMagic[8] = {'R', 'O', 'D', 'P', 'O', 'C', 'K', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::string stream_name(Stage s, const char* what) {
  return "stage" + std::to_string(static_cast<int>(s)) + "/" + what;
}

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

ParameterSet<float> named_like(const ParameterSet<float>& params, const std::vector<Matrix<float>>& values) {
  ParameterSet<float> out;
  for (int i = 0; i < params.size(); ++i) out.add(params[i].name, values[static_cast<std::size_t>(i)]);
  return out;
}

std::vector<Matrix<float>> values_of(const ParameterSet<float>& p) {
  std::vector<Matrix<float>> out;
  for (const auto& x : p) out.push_back(x.value);
  return out;
}

std::string norms_summary(const ParameterSet<float>& params) {
  std::ostringstream os;
  for (const auto& p : params) os << "  " << p.name << " |w|=" << p.value.norm() << " |g|=" << p.grad.norm() << '\n';
  return os.str();
}

}  // namespace

std::string to_json(const EpochRecord& r) {
  json j;
  j["stage"] = r.stage;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["loss_ce"] = r.loss_ce;
  j["loss_dpo"] = r.loss_dpo;
  j["loss_total"] = r.loss_total;
  j["ndcg@5"] = r.ndcg5;
  j["mrr@5"] = r.mrr5;
  j["wall_ms"] = r.wall_ms;
  return j.dump();
}

ReferencePolicy::ReferencePolicy(const encoder::PolicySnapshot& snap, const data::ItemCatalog& catalog)
    : model_(encoder::restore_encoder(snap, catalog)) {}

Matrix<float> ReferencePolicy::score(const encoder::PackedInput& in) const {
  ++calls_;
  Tape<float> tape(false);
  return model_.forward(tape, in).logits.value();
}

eval::Scorer scorer_of(const encoder::Encoder<float>& model) {
  return [&model](std::span<const data::Context> ctx) { return model.score(ctx); };
}

Trainer::Trainer(const data::Dataset& data, encoder::Encoder<float> policy, const TrainConfig& cfg, Stage stage)
    : data_(&data),
      cfg_(cfg),
      stage_(stage),
      policy_(std::move(policy)),
      adam_(policy_.params(), AdamHyper{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps}),
      batches_(data.split, data::training_examples(data.split), cfg.batch_size,
               stream_seed(cfg.seed, stream_name(stage, "shuffle"))),
      noise_(make_stream(cfg.seed, stream_name(stage, "moe-noise"))),
      sampler_(make_stream(cfg.seed, stream_name(stage, "sampler"))) {
  cfg_.validate();
  if (batches_.examples() == 0) throw TrainingError("no training examples: every sequence is too short");
  if (policy_.config().max_seq_len < data.split.max_seq_len) {
    throw ConfigError("model.max_seq_len " + std::to_string(policy_.config().max_seq_len) +
                      " is shorter than the dataset's " + std::to_string(data.split.max_seq_len));
  }
  if (policy_.n_items() != data.split.n_items) throw DataError("model and dataset disagree on the item count");
}

Trainer Trainer::warmup(const data::Dataset& data, const encoder::EncoderConfig& model, const TrainConfig& cfg) {
  cfg.validate();
  return Trainer(data, encoder::Encoder<float>(model, data.catalog, cfg.seed), cfg, Stage::warmup);
}

Trainer Trainer::preference(const data::Dataset& data, const encoder::PolicySnapshot& sft, const TrainConfig& cfg) {
  cfg.validate();
  if (!sft.params.all_finite()) throw ContractError("warm-up snapshot has non-finite parameters");
  Trainer t(data, encoder::restore_encoder(sft, data.catalog), cfg, Stage::preference);
  if (cfg.dpo.enabled) {
    t.reference_ = std::make_unique<ReferencePolicy>(sft, data.catalog);
    t.reference_checksum_ = t.reference_->checksum();
  }
  return t;
}

bool Trainer::done() const {
  if (stage_ == Stage::warmup) return epoch_ >= cfg_.stage1_epochs;
  return epoch_ >= cfg_.stage2_max_epochs || bad_epochs_ >= cfg_.patience;
}

StepRecord Trainer::step() {
  if (done()) throw ContractError("training stage already finished");
  if (batches_.exhausted()) {
    batches_.begin_epoch();
    sum_ce_ = sum_dpo_ = sum_total_ = 0;
    epoch_steps_ = 0;
    epoch_ms_ = 0;
  }
  const auto t0 = Clock::now();
  data::Batch batch;
  batches_.next(batch);
  StepRecord rec = train_on(batch);
  epoch_ms_ += ms_since(t0);
  sum_ce_ += rec.loss_ce;
  sum_dpo_ += rec.loss_dpo;
  sum_total_ += rec.loss_total;
  ++epoch_steps_;
  if (batches_.exhausted()) end_epoch();
  return rec;
}

void Trainer::run() {
  while (!done()) step();
}

StepRecord Trainer::train_on(const data::Batch& batch) {
  const encoder::PackedInput in = encoder::pack(batch, policy_.config().time_buckets);
  policy_.params().zero_grad();
  Tape<float> tape;
  const auto f = policy_.forward(tape, in, encoder::ForwardMode{true, &noise_});
  Var<float> ce = preference::cross_entropy(f.logits, batch.targets);
  Var<float> total = ce;
  StepRecord rec;
  rec.stage = static_cast<int>(stage_);
  rec.epoch = epoch_ + 1;
  rec.step = step_ + 1;
  rec.loss_ce = ce.item();

  if (stage_ == Stage::preference && cfg_.dpo.enabled) {
    const Matrix<float> ref = reference_->score(in);
    const Matrix<float>& scores = f.logits.value();
    std::vector<int> losers;
    losers.reserve(static_cast<std::size_t>(batch.size()));
    for (int b = 0; b < batch.size(); ++b) {
      const int target = batch.targets[static_cast<std::size_t>(b)];
      preference::CandidatePool pool;
      pool.target = target;
      if (cfg_.dpo.strategy != preference::Strategy::random) {
        std::vector<int> history;
        if (cfg_.dpo.exclude_history) {
          for (int it : batch.row(b)) {
            if (it != batch.padding_id) history.push_back(it);
          }
        }
        pool = preference::build_candidate_pool(scores.row(b), target, cfg_.dpo.k, history);
      }
      const int loser = preference::sample_negative(cfg_.dpo.strategy, pool, policy_.n_items(), sampler_);
      losers.push_back(loser);
      const int uid = data_->split.users[static_cast<std::size_t>(batch.users[static_cast<std::size_t>(b)])].user_id;
      trace_.push_back({epoch_ + 1, step_ + 1, uid, target, loser});
    }
    Var<float> dpo = preference::dpo_margin_loss(f.logits, ref, batch.targets, losers, cfg_.dpo.beta);
    rec.loss_dpo = dpo.item();
    total = ce + scale(dpo, static_cast<float>(cfg_.dpo.lambda));
  }
  if (f.balance_loss) total = total + scale(*f.balance_loss, static_cast<float>(policy_.config().moe.balance_coef));
  rec.loss_total = total.item();
  if (!std::isfinite(rec.loss_total)) {
    throw TrainingError("non-finite loss at stage " + std::to_string(rec.stage) + " step " + std::to_string(rec.step) +
                        " (batch of " + std::to_string(batch.size()) + ", ce " + std::to_string(rec.loss_ce) +
                        ", dpo " + std::to_string(rec.loss_dpo) + ")\nparameter norms:\n" +
                        norms_summary(policy_.params()));
  }
  tape.backward(total);
  rec.grad_norm = clip_global_norm(policy_.params(), cfg_.clip_norm);
  adam_.step(policy_.params());
  ++step_;
  step_log_.push_back(rec);
  return rec;
}

void Trainer::end_epoch() {
  ++epoch_;
  const auto t0 = Clock::now();
  const eval::EvalReport r =
      eval::evaluate(scorer_of(policy_), data_->split, data::SplitPart::valid, {5}, cfg_.eval_batch_size);
  EpochRecord e;
  e.stage = static_cast<int>(stage_);
  e.epoch = epoch_;
  e.step = step_;
  const double n = static_cast<double>(std::max<long long>(epoch_steps_, 1));
  e.loss_ce = sum_ce_ / n;
  e.loss_dpo = sum_dpo_ / n;
  e.loss_total = sum_total_ / n;
  e.ndcg5 = r.ndcg.at(5);
  e.mrr5 = r.mrr.at(5);
  e.wall_ms = epoch_ms_ + ms_since(t0);
  epoch_log_.push_back(e);
  if (log_) *log_ << to_json(e) << '\n' << std::flush;
  if (!quiet_) std::cerr << to_json(e) << '\n';

  if (reference_ && reference_->checksum() != reference_checksum_) {
    throw ContractError("reference policy parameters changed during training");
  }
  if (stage_ == Stage::preference) {
    if (!best_metric_ || e.ndcg5 > *best_metric_) {
      best_metric_ = e.ndcg5;
      best_ = policy_.params();
      bad_epochs_ = 0;
    } else {
      ++bad_epochs_;
    }
  }
}

encoder::PolicySnapshot Trainer::result() const {
  if (stage_ == Stage::preference && best_) return {policy_.config(), *best_};
  return encoder::make_snapshot(policy_);
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  io::write_pod(out, kCheckpointVersion);
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(stage_));
  io::write_string(out, to_text(cfg_));
  io::write_string(out, encoder::to_text(policy_.config()));
  io::write_pod<std::int32_t>(out, epoch_);
  io::write_pod<std::int64_t>(out, step_);
  encoder::write_tensors(out, policy_.params());
  io::write_pod<std::int64_t>(out, adam_.steps());
  encoder::write_tensors(out, named_like(policy_.params(), adam_.first_moments()));
  encoder::write_tensors(out, named_like(policy_.params(), adam_.second_moments()));
  io::write_pod<std::uint64_t>(out, batches_.order().size());
  out.write(reinterpret_cast<const char*>(batches_.order().data()),
            static_cast<std::streamsize>(batches_.order().size() * sizeof(std::uint32_t)));
  io::write_pod<std::uint64_t>(out, batches_.cursor());
  io::write_string(out, batches_.rng_state());
  io::write_string(out, rng_state(noise_));
  io::write_string(out, rng_state(sampler_));
  io::write_pod<std::uint8_t>(out, reference_ ? 1 : 0);
  if (reference_) {
    encoder::write_tensors(out, reference_->model().params());
    io::write_pod<std::uint64_t>(out, reference_checksum_);
  }
  io::write_pod<std::uint8_t>(out, best_ ? 1 : 0);
  if (best_) {
    io::write_pod<double>(out, *best_metric_);
    encoder::write_tensors(out, *best_);
  }
  io::write_pod<std::int32_t>(out, bad_epochs_);
  io::write_pod<double>(out, sum_ce_);
  io::write_pod<double>(out, sum_dpo_);
  io::write_pod<double>(out, sum_total_);
  io::write_pod<std::int64_t>(out, epoch_steps_);
  io::write_pod<double>(out, epoch_ms_);
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Trainer Trainer::resume(const data::Dataset& data, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw DataError(path.string() + ": not a checkpoint");
  if (io::read_pod<std::uint32_t>(in, "checkpoint version") != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version");
  }
  const auto stage = static_cast<Stage>(io::read_pod<std::uint32_t>(in, "stage"));
  if (stage != Stage::warmup && stage != Stage::preference) throw DataError("corrupt checkpoint stage");
  const TrainConfig cfg = train_config_from_text(io::read_string(in, "train config"));
  const encoder::EncoderConfig mcfg = encoder::encoder_config_from_text(io::read_string(in, "model config"));
  const int epoch = io::read_pod<std::int32_t>(in, "epoch");
  const long long step = io::read_pod<std::int64_t>(in, "step");
  const ParameterSet<float> params = encoder::read_tensors(in);

  Trainer t(data, encoder::Encoder<float>(mcfg, data.catalog, params), cfg, stage);
  t.epoch_ = epoch;
  t.step_ = step;
  const long long adam_t = io::read_pod<std::int64_t>(in, "optimizer step");
  auto m = values_of(encoder::read_tensors(in));
  auto v = values_of(encoder::read_tensors(in));
  t.adam_.restore(adam_t, std::move(m), std::move(v));
  const auto n = io::read_pod<std::uint64_t>(in, "order size");
  if (n != t.batches_.examples()) throw DataError("checkpoint was written for a different dataset");
  std::vector<std::uint32_t> order(n);
  in.read(reinterpret_cast<char*>(order.data()), static_cast<std::streamsize>(n * sizeof(std::uint32_t)));
  const auto cursor = io::read_pod<std::uint64_t>(in, "cursor");
  const std::string shuffle_state = io::read_string(in, "shuffle state");
  t.batches_.restore(std::move(order), cursor, shuffle_state);
  restore_rng(t.noise_, io::read_string(in, "noise state"));
  restore_rng(t.sampler_, io::read_string(in, "sampler state"));
  if (io::read_pod<std::uint8_t>(in, "reference flag")) {
    const ParameterSet<float> ref = encoder::read_tensors(in);
    t.reference_ = std::make_unique<ReferencePolicy>(encoder::PolicySnapshot{mcfg, ref}, data.catalog);
    t.reference_checksum_ = io::read_pod<std::uint64_t>(in, "reference checksum");
    if (t.reference_->checksum() != t.reference_checksum_) throw DataError("checkpoint reference checksum mismatch");
  }
  if (io::read_pod<std::uint8_t>(in, "best flag")) {
    t.best_metric_ = io::read_pod<double>(in, "best metric");
    t.best_ = encoder::read_tensors(in);
  }
  t.bad_epochs_ = io::read_pod<std::int32_t>(in, "patience counter");
  t.sum_ce_ = io::read_pod<double>(in, "epoch sums");
  t.sum_dpo_ = io::read_pod<double>(in, "epoch sums");
  t.sum_total_ = io::read_pod<double>(in, "epoch sums");
  t.epoch_steps_ = io::read_pod<std::int64_t>(in, "epoch steps");
  t.epoch_ms_ = io::read_pod<double>(in, "epoch time");
  return t;
}

EfficiencyReport measure_efficiency(const data::Dataset& data, const encoder::PolicySnapshot& snap,
                                    const TrainConfig& cfg, int iterations, int warmup) {
  if (iterations < 1 || warmup < 0) throw ContractError("efficiency: iterations must be positive");
  auto examples = data::training_examples(data.split);
  if (examples.empty()) throw TrainingError("no training examples");
  examples.resize(std::min(examples.size(), static_cast<std::size_t>(cfg.batch_size)));
  const data::Batch batch = data::make_batch(data.split, examples);

  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  };
  auto time_steps = [&](TrainConfig c) {
    Trainer t = Trainer::preference(data, snap, c);
    for (int i = 0; i < warmup; ++i) t.train_on(batch);
    std::vector<double> ms;
    for (int i = 0; i < iterations; ++i) {
      const auto t0 = Clock::now();
      t.train_on(batch);
      ms.push_back(ms_since(t0));
    }
    return median(ms);
  };

  EfficiencyReport r;
  r.batch_size = batch.size();
  r.iterations = iterations;
  TrainConfig ce = cfg;
  ce.dpo.enabled = false;
  TrainConfig full = cfg;
  full.dpo.enabled = true;
  r.ce_step_ms = time_steps(ce);
  r.preference_step_ms = time_steps(full);
  r.step_ratio = r.preference_step_ms / r.ce_step_ms;

  const encoder::Encoder<float> model = encoder::restore_encoder(snap, data.catalog);
  r.parameters = model.params().count();
  std::vector<data::Context> ctx;
  for (const auto& e : examples) ctx.push_back(data::context_of(data.split, e));
  const long long before = ReferencePolicy::calls();
  for (int i = 0; i < warmup; ++i) model.score(ctx);
  std::vector<double> ms;
  for (int i = 0; i < iterations; ++i) {
    const auto t0 = Clock::now();
    model.score(ctx);
    ms.push_back(ms_since(t0));
  }
  r.reference_calls_during_inference = ReferencePolicy::calls() - before;
  r.inference_ms = median(ms);
  r.inference_spread = (*std::max_element(ms.begin(), ms.end()) - *std::min_element(ms.begin(), ms.end())) / r.inference_ms;
  return r;
}

std::string to_json(const EfficiencyReport& r) {
  json j;
  j["batch_size"] = r.batch_size;
  j["iterations"] = r.iterations;
  j["parameters"] = r.parameters;
  j["ce_step_ms"] = r.ce_step_ms;
  j["preference_step_ms"] = r.preference_step_ms;
  j["step_ratio"] = r.step_ratio;
  j["inference_ms"] = r.inference_ms;
  j["inference_spread"] = r.inference_spread;
  j["reference_calls_during_inference"] = r.reference_calls_during_inference;
  return j.dump();
}

}  // namespace rodpo::trainer
