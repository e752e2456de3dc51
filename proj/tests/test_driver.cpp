#include <cmath>
#include <limits>

#include "coevo/driver.hpp"
#include "coevo/io.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace coevo;
using namespace coevo::testing;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.tokenizer.steps = 40;
  c.sft.steps = 5;
  c.driver.batch_prompts = 2;
  c.stage1.group_size = 3;
  c.driver.total_steps = 6;
  c.diagnostics.probe_every = 3;
  c.diagnostics.log_every = 2;
  c.diagnostics.probe_samples = 32;
  c.diagnostics.quality_samples = 24;
  c.diagnostics.record_wall_time = false;
  return c;
}

struct Setup {
  TrainConfig config = tiny_config();
  std::vector<Example> data = make_dataset(config);
  Environment env{config, pretrain_stage(config, data)};
  ParamBundle sft = sft_stage(config, env);
};

Setup& shared_setup() {
  static Setup s;
  return s;
}

}  // namespace

TEST_CASE("validation rejects a group of one") {
  TrainConfig c;
  c.stage1.group_size = 1;
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("group_size"), std::invalid_argument);
  CHECK_NOTHROW(validate(TrainConfig{}));
}

TEST_CASE("train mode names round trip") {
  for (TrainMode m : {TrainMode::kSft, TrainMode::kPolicyOnly, TrainMode::kDecoderOnly, TrainMode::kFull}) {
    CHECK(parse_train_mode(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_train_mode("both"), std::invalid_argument);
}

TEST_CASE("batch prompts are a pure function of seed and step") {
  Setup& s = shared_setup();
  CHECK(batch_prompts(s.config, s.env, 4) == batch_prompts(s.config, s.env, 4));
  CHECK(batch_prompts(s.config, s.env, 4).size() == 2);
}

TEST_CASE("a non-finite reward halts the round naming the step") {
  Setup& s = shared_setup();
  TrainConfig c = s.config;
  c.driver.mode = TrainMode::kPolicyOnly;
  TrainState st = init_state(c, s.env, s.sft);
  run_round(st, s.env, batch_prompts(c, s.env, 0), c);
  st.decoder.get("b2")[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(run_round(st, s.env, batch_prompts(c, s.env, 1), c),
                       doctest::Contains("step 1"), std::runtime_error);
}

TEST_CASE("EMA shadows follow the closed form of the recorded trajectory") {
  Setup& s = shared_setup();
  TrainConfig c = s.config;
  c.driver.policy_ema_decay = 0.9;
  c.driver.reference_decay = 0.8;
  c.driver.decoder_ema_decay = 0.7;
  TrainState st = init_state(c, s.env, s.sft);
  const ParamBundle p0 = st.policy, d0 = st.decoder;
  std::vector<ParamBundle> policies, decoders;
  for (long step = 0; step < 5; ++step) {
    run_round(st, s.env, batch_prompts(c, s.env, step), c);
    policies.push_back(st.policy);
    decoders.push_back(st.decoder);
  }
  auto closed_form = [](const ParamBundle& start, const std::vector<ParamBundle>& traj, double decay) {
    ParamBundle out = start;
    const int n = static_cast<int>(traj.size());
    for (auto& [name, a] : out) {
      for (std::size_t i = 0; i < a.size(); ++i) {
        double v = std::pow(decay, n) * start.get(name)[i];
        for (int k = 0; k < n; ++k) v += (1 - decay) * std::pow(decay, n - 1 - k) * traj[k].get(name)[i];
        a[i] = v;
      }
    }
    return out;
  };
  auto worst = [](const ParamBundle& got, const ParamBundle& want) {
    double w = 0.0;
    for (const auto& [name, a] : want) {
      for (std::size_t i = 0; i < a.size(); ++i) {
        w = std::max(w, std::abs(got.get(name)[i] - a[i]) / std::max(1.0, std::abs(a[i])));
      }
    }
    return w;
  };
  CHECK(worst(st.policy_ema, closed_form(p0, policies, 0.9)) <= 1e-9);
  CHECK(worst(st.reference, closed_form(p0, policies, 0.8)) <= 1e-9);
  CHECK(worst(st.teacher, closed_form(d0, decoders, 0.7)) <= 1e-9);
}

TEST_CASE("zero post-training steps leave the SFT policy as the final checkpoint") {
  TrainConfig c = tiny_config();
  c.driver.total_steps = 0;
  c.paths.out_dir = temp_dir("zero_steps").string();
  const RunArtifacts art = train(c);
  const Checkpoint fin = load_checkpoint(art.final_checkpoint);
  const Checkpoint sft = load_checkpoint(art.out_dir / "sft.ckpt");
  CHECK(fin.step == 0);
  CHECK(bitwise_equal(fin.bundles.at("policy"), sft.bundles.at("policy")));
}

TEST_CASE("metrics rows follow the cadence schedule") {
  TrainConfig c = tiny_config();
  c.driver.total_steps = 7;
  c.paths.out_dir = temp_dir("cadence").string();
  const RunArtifacts art = train(c);
  std::vector<long> train_steps, probe_steps;
  for (const MetricsRecord& r : read_metrics(art.metrics)) {
    if (r.kind == "train") train_steps.push_back(r.step);
    if (r.kind == "shift_probe") probe_steps.push_back(r.step);
  }
  CHECK(train_steps == cadence(c, "train"));
  CHECK(probe_steps == cadence(c, "shift_probe"));
  CHECK(cadence(c, "shift_probe") == std::vector<long>{0, 3, 6, 7});
  CHECK(cadence(c, "train") == std::vector<long>{2, 4, 6});
}
