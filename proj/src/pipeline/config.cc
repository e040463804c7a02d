// Copyright 2026 The dprlhf Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "dprlhf/pipeline/config.h"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dprlhf {
namespace {

using nlohmann::json;

// Reads the keys of one JSON object and rejects the ones nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : path_(std::move(path)) {
    if (j.is_null()) return;
    Require(j.is_object(), ErrorCode::kConfigInvalid, path_ + " must be an object");
    j_ = &j;
  }

  template <typename T>
  void Get(const char* key, T& out) {
    const json* v = Find(key);
    if (v == nullptr || v->is_null()) return;
    try {
      out = v->get<T>();
    } catch (const json::exception&) {
      Fail(ErrorCode::kConfigInvalid, "bad type for " + path_ + "." + key);
    }
  }

  template <typename T>
  void Get(const char* key, std::optional<T>& out) {
    const json* v = Find(key);
    if (v == nullptr || v->is_null()) return;
    T value{};
    Get(key, value);
    out = value;
  }

  void GetPath(const char* key, std::filesystem::path& out,
               const std::filesystem::path& base) {
    std::string s;
    Get(key, s);
    if (s.empty()) return;
    out = std::filesystem::path(s).is_absolute() ? std::filesystem::path(s) : base / s;
  }

  Section Sub(const char* key) {
    const json* v = Find(key);
    static const json kNull;
    return Section(v == nullptr ? kNull : *v, path_ + "." + key);
  }

  void Finish() const {
    if (j_ == nullptr) return;
    for (const auto& [k, v] : j_->items()) {
      Require(seen_.count(k) > 0, ErrorCode::kConfigInvalid,
              "unknown key " + path_ + "." + k);
    }
  }

 private:
  const json* Find(const char* key) {
    seen_.insert(key);
    if (j_ == nullptr) return nullptr;
    auto it = j_->find(key);
    return it == j_->end() ? nullptr : &*it;
  }

  const json* j_ = nullptr;
  std::string path_;
  std::set<std::string> seen_;
};

void ParseDp(Section s, StageDp& dp) {
  s.Get("enabled", dp.enabled);
  s.Get("clip_norm", dp.clip_norm);
  s.Get("noise_multiplier", dp.noise_multiplier);
  s.Get("sampling_rate", dp.sampling_rate);
  s.Get("expected_batch", dp.expected_batch);
  s.Get("steps", dp.steps);
  s.Get("epochs", dp.epochs);
  s.Get("n", dp.dataset_size);
  s.Get("target_epsilon", dp.target_epsilon);
  s.Finish();
}

void ParseAdapter(Section s, AdapterSettings& a) {
  s.Get("rank", a.rank);
  s.Get("alpha", a.alpha);
  s.Get("dropout", a.dropout);
  s.Get("targets", a.targets);
  s.Finish();
}

void Check(bool ok, const std::string& what) {
  Require(ok, ErrorCode::kConfigInvalid, what);
}

void CheckDp(const StageDp& dp, const std::string& stage) {
  Check(dp.clip_norm > 0.0, stage + ".dp.clip_norm must be > 0");
  if (dp.noise_multiplier) {
    Check(*dp.noise_multiplier >= 0.0, stage + ".dp.noise_multiplier must be >= 0");
  }
  if (dp.sampling_rate) {
    Check(*dp.sampling_rate > 0.0 && *dp.sampling_rate <= 1.0,
          stage + ".dp.sampling_rate must be in (0, 1]");
  }
  if (dp.expected_batch) {
    Check(*dp.expected_batch > 0.0, stage + ".dp.expected_batch must be > 0");
  }
  Check(!(dp.sampling_rate && dp.expected_batch),
        stage + ".dp: give sampling_rate or expected_batch, not both");
  Check(!(dp.steps && dp.epochs), stage + ".dp: give steps or epochs, not both");
  if (dp.steps) Check(*dp.steps >= 1, stage + ".dp.steps must be >= 1");
  if (dp.epochs) Check(*dp.epochs > 0.0, stage + ".dp.epochs must be > 0");
  if (dp.dataset_size) Check(*dp.dataset_size >= 1, stage + ".dp.n must be >= 1");
  if (dp.target_epsilon) {
    Check(*dp.target_epsilon > 0.0, stage + ".dp.target_epsilon must be > 0");
  }
}

void CheckAdapter(const AdapterSettings& a, const std::string& stage) {
  Check(a.rank >= 0, stage + ".adapter.rank must be >= 0");
  Check(a.rank == 0 || a.alpha > 0.0, stage + ".adapter.alpha must be > 0");
  Check(a.dropout >= 0.0 && a.dropout < 1.0,
        stage + ".adapter.dropout must be in [0, 1)");
  Check(!a.targets.empty() &&
            a.targets.find_first_not_of("qkvo") == std::string::npos,
        stage + ".adapter.targets must use q, k, v, o");
}

uint64_t Fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

RunConfig ParseRunConfig(const std::string& text,
                         const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    Fail(ErrorCode::kConfigInvalid, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  c.source_text = text;
  Section s(root, "config");
  s.Get("name", c.name);
  s.Get("seed", c.seed);
  s.GetPath("lexicon", c.lexicon, base_dir);
  s.GetPath("refusal_patterns", c.refusals, base_dir);
  {
    Section m = s.Sub("model");
    m.Get("d_model", c.model.d_model);
    m.Get("n_layers", c.model.n_layers);
    m.Get("n_heads", c.model.n_heads);
    m.Get("d_ff", c.model.d_ff);
    m.Get("max_seq_len", c.model.max_seq_len);
    m.Finish();
  }
  {
    Section b = s.Sub("budget");
    b.Get("epsilon_total", c.budget.epsilon_total);
    b.Get("delta", c.budget.delta);
    b.Get("weights", c.budget.weights);
    b.Finish();
  }
  {
    Section k = s.Sub("corpus");
    k.GetPath("path", c.corpus.path, base_dir);
    k.Get("dialogues", c.corpus.dialogues);
    k.Get("generic_fraction", c.corpus.generic_fraction);
    k.Get("canaries", c.corpus.canaries);
    k.Get("canary_repetitions", c.corpus.canary_repetitions);
    k.Get("split", c.corpus.split);
    k.Finish();
  }
  {
    Section p = s.Sub("pretrain");
    p.Get("public_dialogues", c.pretrain.public_dialogues);
    p.Get("generic_fraction", c.pretrain.generic_fraction);
    p.Get("system_prompt_fraction", c.pretrain.system_prompt_fraction);
    p.Get("steps", c.pretrain.steps);
    p.Get("batch_size", c.pretrain.batch_size);
    p.Get("learning_rate", c.pretrain.learning_rate);
    p.Get("seed", c.pretrain.seed);
    p.Finish();
  }
  {
    Section t = s.Sub("sft");
    ParseDp(t.Sub("dp"), c.sft.dp);
    t.Get("learning_rate", c.sft.learning_rate);
    ParseAdapter(t.Sub("adapter"), c.sft.adapter);
    t.Get("steps", c.sft.steps);
    t.Get("batch_size", c.sft.batch_size);
    t.Get("adam_learning_rate", c.sft.adam_learning_rate);
    t.Finish();
  }
  {
    Section p = s.Sub("pairs");
    PrefBuildConfig& b = c.pairs.build;
    p.Get("max_dialogues", c.pairs.max_dialogues);
    p.Get("similarity_threshold", b.similarity_threshold);
    p.Get("min_margin", b.judge.min_margin);
    p.Get("min_words", b.degenerate.min_words);
    p.Get("judge", b.judge_enabled);
    p.Get("temperature", b.generation.temperature);
    p.Get("top_p", b.generation.top_p);
    p.Get("max_new_tokens", b.generation.max_new_tokens);
    p.Get("match_length", b.generation.match_length);
    p.Get("retries", b.generation.retries);
    p.Finish();
  }
  {
    Section r = s.Sub("rm");
    ParseDp(r.Sub("dp"), c.rm.dp);
    r.Get("learning_rate", c.rm.learning_rate);
    ParseAdapter(r.Sub("adapter"), c.rm.adapter);
    r.Finish();
  }
  {
    Section p = s.Sub("ppo");
    PpoConfig& o = c.ppo.ppo;
    ParseDp(p.Sub("dp"), c.ppo.dp);
    ParseAdapter(p.Sub("adapter"), c.ppo.adapter);
    p.Get("prompts", c.ppo.prompts);
    p.Get("kl_cap", c.ppo.kl_cap);
    p.Get("baseline_prompts", c.ppo.baseline_prompts);
    p.Get("beta", o.beta);
    p.Get("clip_range", o.clip_range);
    p.Get("gamma", o.gamma);
    p.Get("lambda", o.lambda);
    p.Get("epochs_per_iteration", o.epochs_per_iteration);
    p.Get("iterations", o.iterations);
    p.Get("value_coef", o.value_coef);
    p.Get("entropy_coef", o.entropy_coef);
    p.Get("normalize_advantages", o.normalize_advantages);
    p.Get("learning_rate", o.learning_rate);
    p.Get("max_new", o.sampling.max_new);
    p.Get("temperature", o.sampling.temperature);
    p.Get("top_p", o.sampling.top_p);
    p.Get("steps_per_epoch", o.steps_per_epoch);
    std::string kl = "sampled";
    p.Get("kl_estimator", kl);
    Check(kl == "sampled" || kl == "full",
          "ppo.kl_estimator must be \"sampled\" or \"full\"");
    o.kl_estimator =
        kl == "full" ? KlEstimator::kFullVocabulary : KlEstimator::kSampledToken;
    p.Finish();
  }
  {
    Section a = s.Sub("attack");
    a.Get("pool_size", c.attack.pool_size);
    a.Get("mink_fraction", c.attack.attack.mink_fraction);
    a.Get("sigma_floor", c.attack.attack.sigma_floor);
    a.Get("bootstrap_iterations", c.attack.attack.bootstrap_iterations);
    a.Get("confidence", c.attack.attack.confidence);
    a.Get("max_fpr", c.attack.attack.max_fpr);
    a.Get("exposure_candidates", c.attack.exposure_candidates);
    a.Finish();
  }
  {
    Section e = s.Sub("eval");
    e.Get("max_examples", c.eval.max_examples);
    e.Get("max_new", c.eval.max_new);
    e.Get("bootstrap_iterations", c.eval.bootstrap_iterations);
    e.Get("confidence", c.eval.confidence);
    e.Get("reward_prompts", c.eval.reward_prompts);
    e.Finish();
  }
  s.Finish();

  try {
    c.model.Validate();
  } catch (const Error& e) {
    Fail(ErrorCode::kConfigInvalid, e.what());
  }
  Check(c.budget.delta > 0.0 && c.budget.delta < 1.0, "budget.delta must be in (0, 1)");
  if (c.budget.epsilon_total) {
    Check(*c.budget.epsilon_total > 0.0, "budget.epsilon_total must be > 0");
  }
  for (double w : c.budget.weights) Check(w > 0.0, "budget.weights must be > 0");
  Check(c.corpus.dialogues >= 0, "corpus.dialogues must be >= 0");
  Check(c.corpus.canaries >= 0 && c.corpus.canary_repetitions >= 1,
        "corpus canary counts out of range");
  Check(c.corpus.generic_fraction >= 0.0 && c.corpus.generic_fraction <= 1.0,
        "corpus.generic_fraction must be in [0, 1]");
  Check(c.pretrain.public_dialogues >= 0 && c.pretrain.steps >= 0 &&
            c.pretrain.batch_size >= 1 && c.pretrain.learning_rate > 0.0,
        "pretrain settings out of range");
  Check(c.pretrain.system_prompt_fraction >= 0.0 &&
            c.pretrain.system_prompt_fraction <= 1.0,
        "pretrain.system_prompt_fraction must be in [0, 1]");
  CheckDp(c.sft.dp, "sft");
  CheckDp(c.rm.dp, "rm");
  CheckDp(c.ppo.dp, "ppo");
  Check(c.rm.dp.enabled && c.ppo.dp.enabled,
        "only the sft stage has a non-private mode");
  CheckAdapter(c.sft.adapter, "sft");
  CheckAdapter(c.rm.adapter, "rm");
  CheckAdapter(c.ppo.adapter, "ppo");
  Check(c.rm.adapter.rank > 0 && c.ppo.adapter.rank > 0,
        "rm and ppo need adapters (rank > 0)");
  Check(c.sft.learning_rate > 0.0 && c.rm.learning_rate > 0.0,
        "learning rates must be > 0");
  Check(c.sft.dp.enabled || (c.sft.steps >= 1 && c.sft.batch_size >= 1 &&
                             c.sft.adam_learning_rate > 0.0),
        "non-private sft needs steps, batch_size and adam_learning_rate");
  Check(c.pairs.max_dialogues >= 0, "pairs.max_dialogues must be >= 0");
  Check(c.ppo.prompts >= 1, "ppo.prompts must be >= 1");
  Check(c.ppo.kl_cap > 0.0, "ppo.kl_cap must be > 0");
  Check(c.ppo.baseline_prompts >= 0, "ppo.baseline_prompts must be >= 0");
  c.ppo.ppo.Validate();
  Check(c.attack.pool_size >= 1 && c.attack.exposure_candidates >= 1,
        "attack sizes must be >= 1");
  Check(c.eval.bootstrap_iterations >= 1 && c.eval.confidence > 0.0 &&
            c.eval.confidence < 1.0 && c.eval.max_new >= 1,
        "eval settings out of range");
  return c;
}

RunConfig LoadRunConfig(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  Require(in.good(), ErrorCode::kMissingPrerequisite,
          "config file not found: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return ParseRunConfig(buf.str(), path.parent_path());
}

double StageTarget(const RunConfig& config, Stage stage) {
  const StageDp& dp = StageDpSettings(config, stage);
  if (dp.target_epsilon) return *dp.target_epsilon;
  if (!config.budget.epsilon_total) return std::numeric_limits<double>::infinity();
  const auto& w = config.budget.weights;
  const double share = w[static_cast<int>(stage)] / (w[0] + w[1] + w[2]);
  return *config.budget.epsilon_total * share;
}

const StageDp& StageDpSettings(const RunConfig& config, Stage stage) {
  switch (stage) {
    case Stage::kSft: return config.sft.dp;
    case Stage::kRm: return config.rm.dp;
    case Stage::kPpo: return config.ppo.dp;
    case Stage::kTotal: break;
  }
  Fail(ErrorCode::kInvalidArgument, "no DP settings for the total");
}

ResolvedStage ResolveStage(const RunConfig& config, Stage stage, std::size_t n,
                           const std::function<int64_t(double)>& derive_steps,
                           bool enforce_target) {
  const StageDp& dp = StageDpSettings(config, stage);
  const std::string name = StageName(stage);
  Check(n >= 1, name + ": empty dataset");
  ResolvedStage r;
  r.stage = stage;
  r.n = n;
  r.target_epsilon = StageTarget(config, stage);
  DpSpec& spec = r.spec;
  spec.clip_norm = dp.clip_norm;
  spec.delta = config.budget.delta;
  if (dp.sampling_rate) {
    spec.sampling_rate = *dp.sampling_rate;
  } else {
    Check(dp.expected_batch.has_value(),
          name + ".dp needs sampling_rate or expected_batch");
    spec.sampling_rate = std::min(1.0, *dp.expected_batch / static_cast<double>(n));
  }
  if (dp.steps) {
    spec.steps = *dp.steps;
  } else if (dp.epochs) {
    spec.steps = static_cast<int64_t>(std::ceil(*dp.epochs / spec.sampling_rate - 1e-9));
  } else {
    Check(static_cast<bool>(derive_steps), name + ".dp needs steps or epochs");
    spec.steps = derive_steps(spec.sampling_rate);
  }
  Check(spec.steps >= 1, name + ": step count must be >= 1");
  if (dp.noise_multiplier) {
    spec.noise_multiplier = *dp.noise_multiplier;
  } else {
    Check(std::isfinite(r.target_epsilon),
          name + ".dp needs noise_multiplier or an epsilon target");
    try {
      spec.noise_multiplier = CalibrateSigma(spec.sampling_rate, spec.steps,
                                             spec.delta, r.target_epsilon);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kUnattainableTarget) throw;
      Fail(ErrorCode::kBudgetViolation, name + ": " + e.what());
    }
    r.calibrated = true;
  }
  spec.Validate();
  r.budget = EpsilonFor(spec.sampling_rate, spec.noise_multiplier, spec.steps,
                        spec.delta, stage);
  if (enforce_target && r.budget.epsilon > r.target_epsilon * (1.0 + 1e-9)) {
    char msg[160];
    std::snprintf(msg, sizeof(msg), "%s: accountant gives eps = %.4g above target %.4g",
                  name.c_str(), r.budget.epsilon, r.target_epsilon);
    Fail(ErrorCode::kBudgetViolation, msg);
  }
  return r;
}

std::size_t ConfiguredStageSize(const RunConfig& config, Stage stage) {
  const StageDp& dp = StageDpSettings(config, stage);
  if (dp.dataset_size) return static_cast<std::size_t>(*dp.dataset_size);
  if (stage == Stage::kPpo) return static_cast<std::size_t>(config.ppo.prompts);
  return 0;
}

void ValidateRunConfig(const RunConfig& config) {
  for (const auto* p : {&config.lexicon, &config.refusals, &config.corpus.path}) {
    Check(p->empty() || std::filesystem::exists(*p),
          "path does not exist: " + p->string());
  }
  for (Stage stage : {Stage::kSft, Stage::kRm, Stage::kPpo}) {
    if (!StageDpSettings(config, stage).enabled) continue;
    const std::size_t n = ConfiguredStageSize(config, stage);
    const StageDp& dp = StageDpSettings(config, stage);
    // Stages without a sampling schedule are rejected when they run.
    if (!dp.sampling_rate && !dp.expected_batch) continue;
    if (n == 0 && !dp.sampling_rate) continue;
    if (n == 0 && !(dp.steps || dp.epochs || stage == Stage::kPpo)) continue;
    std::function<int64_t(double)> derive;
    if (stage == Stage::kPpo) {
      derive = [&](double q) {
        DpSpec s;
        s.sampling_rate = q;
        return PpoTotalSteps(s, config.ppo.ppo);
      };
    }
    ResolveStage(config, stage, n == 0 ? 1 : n, derive);
  }
}

std::string RunId(const RunConfig& config) {
  const std::string canonical = json::parse(config.source_text).dump();
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(Fnv1a(canonical)));
  return config.name + "-" + hex;
}

std::filesystem::path OutputRoot() {
  const char* env = std::getenv("DPRLHF_OUTPUT_ROOT");
  return env != nullptr && *env != '\0' ? std::filesystem::path(env)
                                        : std::filesystem::path("runs");
}

int ExitCodeFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfigInvalid: return 2;
    case ErrorCode::kMissingPrerequisite: return 3;
    case ErrorCode::kBudgetViolation:
    case ErrorCode::kUnattainableTarget: return 4;
    default: return 1;
  }
}

}  // namespace dprlhf
