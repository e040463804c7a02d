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


#include "dprlhf/pipeline/stages.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>

#include "json.hpp"
#include "dprlhf/common/stats.h"
#include "dprlhf/dpsgd/dp_loop.h"
#include "dprlhf/evalmetrics/metrics.h"
#include "dprlhf/pipeline/synth.h"
#include "dprlhf/reward/reward.h"
#include "dprlhf/tinylm/checkpoint.h"
#include "dprlhf/tinylm/lm.h"
#include "dprlhf/tinylm/sampling.h"
#include "dprlhf/tinylm/train.h"

namespace dprlhf {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr PipelineStage kOrder[] = {
    PipelineStage::kPrep, PipelineStage::kPretrain, PipelineStage::kPairs,
    PipelineStage::kSft,  PipelineStage::kRm,       PipelineStage::kPpo,
    PipelineStage::kAttack, PipelineStage::kEval,   PipelineStage::kAccount};

// Seed streams per stage, derived from the run seed.
uint64_t StageSeed(const RunConfig& config, PipelineStage stage) {
  return DeriveSeed(config.seed, 100 + static_cast<uint64_t>(stage));
}

void Log(const RunDir& dir, PipelineStage stage, const std::string& msg) {
  const std::string line = "[" + std::string(PipelineStageName(stage)) + "] " + msg;
  std::cerr << line << '\n';
  fs::create_directories(dir.root() / "logs");
  std::ofstream(dir.logs("pipeline.log"), std::ios::app) << line << '\n';
}

void RequireFile(const fs::path& path, const std::string& what) {
  Require(fs::exists(path), ErrorCode::kMissingPrerequisite,
          what + " not found (" + path.string() + ")");
}

std::string Num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::ofstream OpenCsv(const fs::path& path, const std::string& header) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  Require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out << header << '\n';
  return out;
}

bool IsCanary(const DialogueExample& e) {
  return e.conversation_id.rfind("canary-", 0) == 0;
}

std::vector<DialogueExample> WithoutCanaries(std::span<const DialogueExample> v) {
  std::vector<DialogueExample> out;
  for (const auto& e : v) {
    if (!IsCanary(e)) out.push_back(e);
  }
  return out;
}

Model LoadModel(const RunDir& dir, const std::string& name, const std::string& what) {
  RequireFile(dir.checkpoint(name), what);
  return GetModel(LoadCheckpoint(dir.checkpoint(name)));
}

void SaveModel(const RunDir& dir, const std::string& name, const Model& model,
               const json& meta = json::object()) {
  Checkpoint ckpt;
  PutModel(ckpt, model);
  ckpt.meta["stage"] = name;
  for (const auto& [k, v] : meta.items()) ckpt.meta[k] = v;
  fs::create_directories(dir.root() / "checkpoints");
  SaveCheckpoint(dir.checkpoint(name), ckpt);
}

std::vector<DialogueExample> LoadSplit(const RunDir& dir, const std::string& split) {
  const fs::path p = dir.data(split + ".jsonl");
  RequireFile(p, split + " split (run prep first)");
  return ReadDialogues(p);
}

void RecordLedger(const RunDir& dir, const LedgerEntry& entry) {
  PrivacyLedger ledger = PrivacyLedger::Load(dir.ledger());
  ledger.Record(entry);
  ledger.Save(dir.ledger());
}

uint64_t HashText(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Model LoadPpoActor(const RunDir& dir) { return LoadModel(dir, "ppo_actor", "PPO policy"); }

std::function<int64_t(double)> PpoStepRule(const RunConfig& config) {
  return [&config](double q) {
    DpSpec s;
    s.sampling_rate = q;
    return PpoTotalSteps(s, config.ppo.ppo);
  };
}

// ---------------------------------------------------------------- stages

void Prep(const RunConfig& config, const RunDir& dir) {
  std::vector<DialogueExample> corpus;
  if (!config.corpus.path.empty()) {
    RequireFile(config.corpus.path, "corpus");
    corpus = ReadDialogues(config.corpus.path);
  } else {
    SynthConfig sc;
    sc.dialogues = config.corpus.dialogues;
    sc.seed = DeriveSeed(config.seed, 1);
    sc.generic_fraction = config.corpus.generic_fraction;
    corpus = GenerateSyntheticCorpus(sc).dialogues;
  }
  std::size_t too_long = 0;
  std::vector<DialogueExample> kept;
  for (auto& e : corpus) {
    if (EncodeDialogue(e.patient_text, e.doctor_text).size() >
        static_cast<std::size_t>(config.model.max_seq_len)) {
      ++too_long;
      continue;
    }
    kept.push_back(std::move(e));
  }
  Rng split_rng(StageSeed(config, PipelineStage::kPrep));
  Splits splits = GroupSplit(kept, config.corpus.split, split_rng);
  Rng canary_rng(DeriveSeed(config.seed, 2));
  const std::vector<Canary> canaries = MakeCanaries(
      config.corpus.canaries, config.corpus.canary_repetitions, canary_rng);
  if (!canaries.empty()) splits.train = InsertCanaries(splits.train, canaries);
  WriteDialogues(dir.data("train.jsonl"), splits.train);
  WriteDialogues(dir.data("validation.jsonl"), splits.validation);
  WriteDialogues(dir.data("test.jsonl"), splits.test);
  WriteCanaries(dir.data("canaries.jsonl"), canaries);
  std::ofstream out = OpenCsv(dir.metrics("split_sizes.csv"), "split,examples");
  out << "train," << splits.train.size() << "\nvalidation," << splits.validation.size()
      << "\ntest," << splits.test.size() << "\ndropped_too_long," << too_long << '\n';
  Log(dir, PipelineStage::kPrep,
      "train " + std::to_string(splits.train.size()) + " (with " +
          std::to_string(canaries.size()) + " canaries), validation " +
          std::to_string(splits.validation.size()) + ", test " +
          std::to_string(splits.test.size()));
}

SynthCorpus PublicDialogues(const RunConfig& config) {
  const PretrainSettings& p = config.pretrain;
  SynthConfig sc;
  sc.dialogues = p.public_dialogues;
  sc.seed = DeriveSeed(p.seed, 7);
  sc.id_prefix = "pub";
  sc.generic_fraction = p.generic_fraction;
  return GenerateSyntheticCorpus(sc);
}

std::vector<TokenSeq> PublicCorpus(const RunConfig& config) {
  const PretrainSettings& p = config.pretrain;
  const SynthCorpus corpus = PublicDialogues(config);
  Rng rng(DeriveSeed(p.seed, 8));
  std::vector<TokenSeq> out;
  out.reserve(corpus.dialogues.size());
  const std::size_t limit = config.model.max_seq_len;
  for (const DialogueExample& e : corpus.dialogues) {
    TokenSeq seq;
    if (rng.Bernoulli(p.system_prompt_fraction)) {
      const DialogueExample g = SynthDialogue(e.conversation_id, ResponseStyle::kGeneric, rng);
      seq = EncodeExample(RejectedPrompt(e.patient_text), " " + g.doctor_text);
    } else {
      seq = EncodeDialogue(e.patient_text, e.doctor_text);
    }
    if (seq.size() <= limit) out.push_back(std::move(seq));
  }
  return out;
}

void Pretrain(const RunConfig& config, const RunDir& dir) {
  const PretrainSettings& p = config.pretrain;
  json key = {{"model", ConfigToJson(config.model)},
              {"public_dialogues", p.public_dialogues},
              {"generic_fraction", p.generic_fraction},
              {"system_prompt_fraction", p.system_prompt_fraction},
              {"steps", p.steps},
              {"batch_size", p.batch_size},
              {"learning_rate", p.learning_rate},
              {"seed", p.seed}};
  char name[40];
  std::snprintf(name, sizeof(name), "base-%016llx.ckpt",
                static_cast<unsigned long long>(HashText(key.dump())));
  const fs::path cached = dir.cache() / name;
  fs::create_directories(dir.root() / "checkpoints");
  if (fs::exists(cached)) {
    fs::copy_file(cached, dir.checkpoint("base"), fs::copy_options::overwrite_existing);
    Log(dir, PipelineStage::kPretrain, "reused cached backbone " + cached.string());
    return;
  }
  Model model = InitModel(config.model, DeriveSeed(p.seed, 9));
  const std::vector<TokenSeq> data = PublicCorpus(config);
  std::vector<double> losses;
  if (!data.empty() && p.steps > 0) {
    NllTrainConfig tc;
    tc.adam.learning_rate = p.learning_rate;
    tc.batch_size = p.batch_size;
    tc.steps = p.steps;
    tc.seed = DeriveSeed(p.seed, 10);
    tc.loss = LossKind::kNll;
    losses = TrainNll(model, data, tc);
  }
  std::ofstream out = OpenCsv(dir.metrics("pretrain_curve.csv"), "step,mean_loss");
  out.precision(10);
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << losses[i] << '\n';
  SaveModel(dir, "base", model, {{"pretrain", key}});
  fs::create_directories(dir.cache());
  const fs::path tmp = dir.cache() / (std::string(name) + ".tmp");
  fs::copy_file(dir.checkpoint("base"), tmp, fs::copy_options::overwrite_existing);
  fs::rename(tmp, cached);
  Log(dir, PipelineStage::kPretrain,
      "pretrained on " + std::to_string(data.size()) + " public examples, final loss " +
          (losses.empty() ? std::string("n/a") : Num(losses.back())));
}

void Pairs(const RunConfig& config, const RunDir& dir) {
  const Model base = LoadModel(dir, "base", "base checkpoint");
  std::vector<DialogueExample> train = WithoutCanaries(LoadSplit(dir, "train"));
  if (train.size() > static_cast<std::size_t>(config.pairs.max_dialogues)) {
    train.resize(config.pairs.max_dialogues);
  }
  Require(!config.lexicon.empty() && !config.refusals.empty(),
          ErrorCode::kConfigInvalid, "pairs needs lexicon and refusal_patterns");
  const EntityLexicon lexicon = EntityLexicon::Load(config.lexicon);
  const RefusalPatterns refusals = RefusalPatterns::Load(config.refusals);
  const HashedNgramEmbedder embedder;
  const PrefBuildResult result =
      BuildPreferencePairs(train, ModelGenerator(base), embedder, lexicon, refusals,
                           config.pairs.build, StageSeed(config, PipelineStage::kPairs));
  WritePairs(dir.data("pairs.jsonl"), result.pairs);
  WriteFilterReport(dir.metrics("filter_report.csv"), result.report);
  Log(dir, PipelineStage::kPairs,
      std::to_string(result.report.kept) + " of " + std::to_string(result.report.input) +
          " pairs kept");
}

void Sft(const RunConfig& config, const RunDir& dir) {
  const Model base = LoadModel(dir, "base", "base checkpoint");
  const std::vector<DialogueExample> train = LoadSplit(dir, "train");
  Require(!train.empty(), ErrorCode::kMissingPrerequisite, "empty train split");
  const SftSettings& s = config.sft;
  const uint64_t seed = StageSeed(config, PipelineStage::kSft);
  fs::remove(dir.logs("sft_audit.csv"));
  if (s.dp.enabled) {
    const ResolvedStage r = ResolveStage(config, Stage::kSft, train.size());
    SftResult result = DpSft(base, train, r.spec, s, r.target_epsilon, seed,
                             dir.logs("sft_audit.csv"));
    WriteSftCurve(dir.metrics("sft_curve.csv"), result.curve);
    SaveModel(dir, "sft", result.model);
    const LedgerEntry entry = MakeLedgerEntry(Stage::kSft, train.size(), r.spec);
    RecordLedger(dir, entry);
    Log(dir, PipelineStage::kSft,
        "DP-SFT n=" + std::to_string(train.size()) + " q=" + Num(r.spec.sampling_rate) +
            " T=" + std::to_string(r.spec.steps) + " sigma=" +
            Num(r.spec.noise_multiplier) + " eps=" + Num(entry.budget.epsilon));
    return;
  }
  Model model = base;
  if (s.adapter.rank > 0) {
    AttachAdapters(model, s.adapter.rank, s.adapter.alpha, s.adapter.dropout,
                   s.adapter.targets, DeriveSeed(seed, 1));
  }
  std::vector<TokenSeq> data;
  for (const auto& e : train) data.push_back(EncodeDialogue(e.patient_text, e.doctor_text));
  NllTrainConfig tc;
  tc.adam.learning_rate = s.adam_learning_rate;
  tc.batch_size = s.batch_size;
  tc.steps = s.steps;
  tc.seed = DeriveSeed(seed, 2);
  const std::vector<double> losses = TrainNll(model, data, tc);
  std::vector<SftCurvePoint> curve;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    curve.push_back({static_cast<int64_t>(i), static_cast<std::size_t>(s.batch_size),
                     losses[i], 0.0});
  }
  WriteSftCurve(dir.metrics("sft_curve.csv"), curve);
  SaveModel(dir, "sft", model, {{"private", false}});
  DpSpec spec;
  spec.clip_norm = s.dp.clip_norm;
  spec.noise_multiplier = 0.0;
  spec.sampling_rate = std::min(1.0, static_cast<double>(s.batch_size) / train.size());
  spec.steps = s.steps;
  spec.delta = config.budget.delta;
  RecordLedger(dir, MakeLedgerEntry(Stage::kSft, train.size(), spec));
  Log(dir, PipelineStage::kSft, "non-private SFT, " + std::to_string(s.steps) +
                                    " Adam steps, final loss " + Num(losses.back()));
}

void Rm(const RunConfig& config, const RunDir& dir) {
  const Model sft = LoadModel(dir, "sft", "SFT checkpoint");
  RequireFile(dir.data("pairs.jsonl"), "preference pairs");
  const std::vector<PreferencePair> pairs = ReadPairs(dir.data("pairs.jsonl"));
  Require(!pairs.empty(), ErrorCode::kMissingPrerequisite, "no preference pairs");
  const uint64_t seed = StageSeed(config, PipelineStage::kRm);
  const ResolvedStage r = ResolveStage(config, Stage::kRm, pairs.size());
  RewardInit init;
  init.adapter_rank = config.rm.adapter.rank;
  init.adapter_alpha = config.rm.adapter.alpha;
  init.adapter_dropout = config.rm.adapter.dropout;
  init.adapter_targets = config.rm.adapter.targets;
  Model rm = MakeRewardModel(sft, init, DeriveSeed(seed, 1));
  RewardTrainConfig tc;
  tc.learning_rate = config.rm.learning_rate;
  tc.seed = DeriveSeed(seed, 2);
  tc.audit_log = dir.logs("rm_audit.csv");
  fs::remove(tc.audit_log);
  const std::vector<RewardCurvePoint> curve = TrainReward(rm, pairs, r.spec, tc);
  WriteRewardCurve(dir.metrics("rm_curve.csv"), curve);
  SaveModel(dir, "rm", rm);
  const double acc = RankingAccuracy(rm, pairs);
  std::ofstream out = OpenCsv(dir.metrics("rm_accuracy.csv"), "pairs,ranking_accuracy");
  out << pairs.size() << ',' << Num(acc) << '\n';
  const LedgerEntry entry = MakeLedgerEntry(Stage::kRm, pairs.size(), r.spec);
  RecordLedger(dir, entry);
  Log(dir, PipelineStage::kRm,
      "DP-RM n=" + std::to_string(pairs.size()) + " T=" + std::to_string(r.spec.steps) +
          " sigma=" + Num(r.spec.noise_multiplier) + " eps=" + Num(entry.budget.epsilon) +
          " ranking accuracy " + Num(acc));
}

std::vector<TokenSeq> PpoPrompts(const RunConfig& config, const RunDir& dir) {
  const std::vector<DialogueExample> train = WithoutCanaries(LoadSplit(dir, "train"));
  std::vector<TokenSeq> prompts;
  for (const auto& e : train) {
    if (prompts.size() == static_cast<std::size_t>(config.ppo.prompts)) break;
    prompts.push_back(EncodeDialoguePrompt(e.patient_text));
  }
  return prompts;
}

void Ppo(const RunConfig& config, const RunDir& dir) {
  const Model sft = LoadModel(dir, "sft", "SFT checkpoint");
  const Model rm = LoadModel(dir, "rm", "reward model checkpoint");
  const std::vector<TokenSeq> prompts = PpoPrompts(config, dir);
  Require(!prompts.empty(), ErrorCode::kMissingPrerequisite, "no PPO prompts");
  const uint64_t seed = StageSeed(config, PipelineStage::kPpo);
  const ResolvedStage r =
      ResolveStage(config, Stage::kPpo, prompts.size(), PpoStepRule(config));
  const AdapterSettings& a = config.ppo.adapter;
  ActorCritic ac = MakeActorCritic(sft, a.rank, a.alpha, a.targets, DeriveSeed(seed, 1));
  PpoConfig pc = config.ppo.ppo;
  pc.seed = DeriveSeed(seed, 2);
  pc.audit_log = dir.logs("ppo_audit.csv");
  fs::remove(pc.audit_log);
  const RewardFn raw_reward = MakeRewardFn(rm);
  double baseline = 0.0;
  const std::vector<DialogueExample> pub = PublicDialogues(config).dialogues;
  const std::size_t k = std::min<std::size_t>(config.ppo.baseline_prompts, pub.size());
  if (k > 0) {
    std::vector<TokenSeq> public_prompts;
    for (std::size_t i = 0; i < k; ++i) {
      public_prompts.push_back(EncodeDialoguePrompt(pub[i].patient_text));
    }
    baseline = EvaluatePolicy(sft, sft, raw_reward, public_prompts, pc.sampling,
                              DeriveSeed(seed, 4))
                   .mean_reward;
  }
  std::ofstream(dir.metrics("ppo_reward_baseline.csv"), std::ios::trunc)
      << "public_prompts,baseline\n" << k << ',' << Num(baseline) << '\n';
  const RewardFn reward = [&](const TokenSeq& seq) { return raw_reward(seq) - baseline; };
  OptimState state(pc.learning_rate, DeriveSeed(seed, 3));
  const std::vector<PpoIterationStats> stats =
      TrainPpo(ac.actor, ac.critic, sft, reward, prompts, r.spec, pc, state);
  WritePpoCurve(dir.metrics("ppo_curve.csv"), stats);
  SaveModel(dir, "ppo_actor", ac.actor);
  SaveModel(dir, "ppo_critic", ac.critic);
  DpSpec used = r.spec;
  const LedgerEntry entry = MakeLedgerEntry(Stage::kPpo, prompts.size(), used);
  RecordLedger(dir, entry);
  Log(dir, PipelineStage::kPpo,
      "DP-PPO prompts=" + std::to_string(prompts.size()) + " q=" +
          Num(r.spec.sampling_rate) + " T=" + std::to_string(r.spec.steps) + " sigma=" +
          Num(r.spec.noise_multiplier) + " eps=" + Num(entry.budget.epsilon) +
          " reward " + Num(stats.front().mean_reward) + " -> " +
          Num(stats.back().mean_reward));
}

void AttackModel(const RunConfig& config, const RunDir& dir, const std::string& tag,
                 const Model& model, const Model& reference,
                 const MembershipPools& pools, std::span<const Canary> canaries) {
  std::vector<DialogueExample> records = pools.members;
  records.insert(records.end(), pools.nonmembers.begin(), pools.nonmembers.end());
  const std::size_t n = records.size();
  std::unique_ptr<bool[]> is_member(new bool[n]());
  std::fill(is_member.get(), is_member.get() + pools.members.size(), true);
  const std::vector<AttackScore> scores =
      ScoreRecords(model, reference, records, std::span<const bool>(is_member.get(), n),
                   config.attack.attack);
  const uint64_t seed = StageSeed(config, PipelineStage::kAttack);
  const std::vector<AttackSummary> summary =
      SummarizeAttacks(scores, config.attack.attack, DeriveSeed(seed, 1));
  WriteAttackScores(dir.metrics("attack_scores_" + tag + ".csv"), scores);
  WriteAttackSummary(dir.metrics("attack_summary_" + tag + ".csv"), summary);

  std::ofstream out = OpenCsv(dir.metrics("canaries_" + tag + ".csv"),
                              "canary_id,repetitions,extracted,exposure");
  int extracted = 0;
  for (std::size_t i = 0; i < canaries.size(); ++i) {
    const bool hit = CanaryExtracted(model, canaries[i]);
    extracted += hit ? 1 : 0;
    Rng rng(DeriveSeed(DeriveSeed(seed, 2), i));
    const double exposure =
        CanaryExposure(model, canaries[i], config.attack.exposure_candidates, rng);
    out << canaries[i].id << ',' << canaries[i].repetitions << ',' << (hit ? 1 : 0) << ','
        << Num(exposure) << '\n';
  }
  std::string line = tag + ": canaries extracted " + std::to_string(extracted) + "/" +
                     std::to_string(canaries.size());
  for (const AttackSummary& s : summary) {
    line += ", " + std::string(AttackName(s.attack)) + " AUC " + Num(s.auc);
  }
  Log(dir, PipelineStage::kAttack, line);
}

std::vector<std::string> AttackTargets(const RunDir& dir) {
  std::vector<std::string> out = {"sft"};
  if (fs::exists(dir.checkpoint("ppo_actor"))) out.push_back("ppo");
  return out;
}

void Attack(const RunConfig& config, const RunDir& dir) {
  const Model base = LoadModel(dir, "base", "base checkpoint");
  const Model sft = LoadModel(dir, "sft", "SFT checkpoint");
  const std::vector<DialogueExample> train = WithoutCanaries(LoadSplit(dir, "train"));
  const std::vector<DialogueExample> test = LoadSplit(dir, "test");
  RequireFile(dir.data("canaries.jsonl"), "canary list");
  const std::vector<Canary> canaries = ReadCanaries(dir.data("canaries.jsonl"));
  Rng rng(DeriveSeed(StageSeed(config, PipelineStage::kAttack), 0));
  const MembershipPools pools =
      BuildMembershipPools(train, test, config.attack.pool_size, rng);
  Require(!pools.members.empty(), ErrorCode::kMissingPrerequisite,
          "no matched member/non-member records");
  std::ofstream summary = OpenCsv(dir.metrics("canary_summary.csv"),
                                  "model,canaries,extracted,mean_exposure");
  for (const std::string& tag : AttackTargets(dir)) {
    const Model model = tag == "sft" ? sft : LoadPpoActor(dir);
    AttackModel(config, dir, tag, model, base, pools, canaries);
    std::ifstream in(dir.metrics("canaries_" + tag + ".csv"));
    std::string line;
    std::getline(in, line);
    int count = 0, hits = 0;
    double exposure = 0.0;
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) f.push_back(cell);
      ++count;
      hits += std::stoi(f[2]);
      exposure += std::stod(f[3]);
    }
    summary << tag << ',' << count << ',' << hits << ','
            << Num(count > 0 ? exposure / count : 0.0) << '\n';
  }
}

struct ExampleMetrics {
  double rouge = 0.0, entity = 0.0, ppl = 0.0;
};

void Eval(const RunConfig& config, const RunDir& dir) {
  Require(!config.lexicon.empty(), ErrorCode::kConfigInvalid, "eval needs a lexicon");
  const EntityLexicon lexicon = EntityLexicon::Load(config.lexicon);
  std::vector<DialogueExample> test = LoadSplit(dir, "test");
  if (test.size() > config.eval.max_examples) test.resize(config.eval.max_examples);
  Require(!test.empty(), ErrorCode::kMissingPrerequisite, "empty test split");
  std::vector<std::pair<std::string, Model>> models;
  models.emplace_back("base", LoadModel(dir, "base", "base checkpoint"));
  models.emplace_back("sft", LoadModel(dir, "sft", "SFT checkpoint"));
  if (fs::exists(dir.checkpoint("ppo_actor"))) models.emplace_back("ppo", LoadPpoActor(dir));

  const uint64_t seed = StageSeed(config, PipelineStage::kEval);
  std::ofstream summary = OpenCsv(dir.metrics("eval_summary.csv"),
                                  "model,metric,mean,ci_lo,ci_hi,examples");
  for (std::size_t m = 0; m < models.size(); ++m) {
    const auto& [tag, model] = models[m];
    const std::vector<ExampleMetrics> rows = IndexedMap<ExampleMetrics>(
        test.size(), [&](std::size_t i) {
          const DialogueExample& e = test[i];
          const TokenSeq out =
              Greedy(model, EncodeDialoguePrompt(e.patient_text), config.eval.max_new);
          const std::string response = ResponseText(out);
          ExampleMetrics r;
          r.rouge = RougeL(response, e.doctor_text).f1;
          r.entity = EntityF1(response, e.doctor_text, lexicon).f1;
          r.ppl = Perplexity(model, EncodeDialogue(e.patient_text, e.doctor_text));
          return r;
        });
    std::ofstream out = OpenCsv(dir.metrics("eval_" + tag + ".csv"),
                                "example_id,rouge_f1,ppl,entity_f1");
    std::vector<double> rouge, entity, ppl;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out << test[i].conversation_id << ',' << Num(rows[i].rouge) << ','
          << Num(rows[i].ppl) << ',' << Num(rows[i].entity) << '\n';
      rouge.push_back(rows[i].rouge);
      entity.push_back(rows[i].entity);
      ppl.push_back(rows[i].ppl);
    }
    const std::pair<const char*, const std::vector<double>*> metrics[] = {
        {"rouge_f1", &rouge}, {"ppl", &ppl}, {"entity_f1", &entity}};
    for (std::size_t k = 0; k < 3; ++k) {
      Rng rng(DeriveSeed(seed, m * 8 + k));
      const Interval ci = BootstrapMeanInterval(*metrics[k].second,
                                                config.eval.bootstrap_iterations,
                                                config.eval.confidence, rng);
      summary << tag << ',' << metrics[k].first << ',' << Num(Mean(*metrics[k].second))
              << ',' << Num(ci.lo) << ',' << Num(ci.hi) << ',' << rows.size() << '\n';
    }
    Log(dir, PipelineStage::kEval,
        tag + ": ROUGE-L " + Num(Mean(rouge)) + ", entity F1 " + Num(Mean(entity)) +
            ", perplexity " + Num(Mean(ppl)));
  }

  if (!fs::exists(dir.checkpoint("rm"))) return;
  const Model rm = LoadModel(dir, "rm", "reward model checkpoint");
  const Model& sft = models[1].second;
  const RewardFn reward = MakeRewardFn(rm);
  std::vector<DialogueExample> held = LoadSplit(dir, "test");
  if (held.size() > config.eval.reward_prompts) held.resize(config.eval.reward_prompts);
  std::vector<TokenSeq> prompts;
  for (const auto& e : held) prompts.push_back(EncodeDialoguePrompt(e.patient_text));
  std::ofstream out = OpenCsv(dir.metrics("policy_reward.csv"),
                              "policy,mean_reward,mean_kl,prompts,kl_cap");
  for (const auto& [tag, model] : models) {
    if (tag == "base") continue;
    const PolicyEval pe = EvaluatePolicy(model, sft, reward, prompts,
                                         config.ppo.ppo.sampling, DeriveSeed(seed, 99));
    out << tag << ',' << Num(pe.mean_reward) << ',' << Num(pe.mean_kl) << ','
        << prompts.size() << ',' << Num(config.ppo.kl_cap) << '\n';
    Log(dir, PipelineStage::kEval,
        tag + ": held-out reward " + Num(pe.mean_reward) + ", KL " + Num(pe.mean_kl));
  }
}

std::size_t DataStageSize(const RunConfig& config, const RunDir& dir, Stage stage) {
  const std::size_t configured = ConfiguredStageSize(config, stage);
  if (configured > 0) return configured;
  if (stage == Stage::kSft && fs::exists(dir.data("train.jsonl"))) {
    return ReadDialogues(dir.data("train.jsonl")).size();
  }
  if (stage == Stage::kRm && fs::exists(dir.data("pairs.jsonl"))) {
    return ReadPairs(dir.data("pairs.jsonl")).size();
  }
  return 0;
}

void Account(const RunConfig& config, const RunDir& dir) {
  PrivacyLedger plan;
  std::vector<std::string> violations;
  for (Stage stage : {Stage::kSft, Stage::kRm, Stage::kPpo}) {
    const StageDp& dp = StageDpSettings(config, stage);
    if (!dp.enabled) continue;
    std::size_t n = DataStageSize(config, dir, stage);
    if (n == 0) {
      Require(dp.sampling_rate.has_value() && (dp.steps || dp.epochs),
              ErrorCode::kMissingPrerequisite,
              StageName(stage) + ": dataset size unknown (set dp.n or run the data stages)");
      n = 1;
    }
    const ResolvedStage r = ResolveStage(
        config, stage, n, stage == Stage::kPpo ? PpoStepRule(config) : nullptr, false);
    LedgerEntry e = MakeLedgerEntry(stage, n, r.spec);
    plan.Record(e);
    std::printf("%-4s n=%-8zu q=%-12.6g T=%-8lld C=%-4g sigma=%-9.6g eps=%-9.6g "
                "target=%-6.4g alpha=%g\n",
                StageName(stage).c_str(), n, r.spec.sampling_rate,
                static_cast<long long>(r.spec.steps), r.spec.clip_norm,
                r.spec.noise_multiplier, e.budget.epsilon, r.target_epsilon,
                e.budget.order);
    if (e.budget.epsilon > r.target_epsilon * (1.0 + 1e-9)) {
      violations.push_back(StageName(stage));
    }
  }
  Require(!plan.entries().empty(), ErrorCode::kConfigInvalid, "no private stages");
  plan.Save(dir.metrics("account.csv"));
  const Budget total = plan.Total();
  std::printf("total eps=%.6g delta=%g (sum over stages)\n", total.epsilon, total.delta);
  if (config.budget.epsilon_total &&
      total.epsilon > *config.budget.epsilon_total * (1.0 + 1e-9)) {
    violations.push_back("total");
  }
  if (fs::exists(dir.ledger())) {
    const PrivacyLedger spent = PrivacyLedger::Load(dir.ledger());
    std::printf("ledger (executed stages): total eps=%.6g\n", spent.Total().epsilon);
  }
  if (!violations.empty()) {
    std::string which;
    for (const auto& v : violations) which += (which.empty() ? "" : ", ") + v;
    Fail(ErrorCode::kBudgetViolation, "epsilon above target for " + which);
  }
}

std::vector<fs::path> StageOutputs(PipelineStage stage, const RunDir& dir) {
  switch (stage) {
    case PipelineStage::kPrep:
      return {dir.data("train.jsonl"), dir.data("validation.jsonl"), dir.data("test.jsonl"),
              dir.data("canaries.jsonl")};
    case PipelineStage::kPretrain: return {dir.checkpoint("base")};
    case PipelineStage::kPairs:
      return {dir.data("pairs.jsonl"), dir.metrics("filter_report.csv")};
    case PipelineStage::kSft: return {dir.checkpoint("sft"), dir.metrics("sft_curve.csv")};
    case PipelineStage::kRm: return {dir.checkpoint("rm"), dir.metrics("rm_curve.csv")};
    case PipelineStage::kPpo:
      return {dir.checkpoint("ppo_actor"), dir.checkpoint("ppo_critic"),
              dir.metrics("ppo_curve.csv")};
    case PipelineStage::kAttack: return {dir.metrics("canary_summary.csv")};
    case PipelineStage::kEval: return {dir.metrics("eval_summary.csv")};
    case PipelineStage::kAccount: return {dir.metrics("account.csv")};
  }
  return {};
}

}  // namespace

std::string_view PipelineStageName(PipelineStage stage) {
  switch (stage) {
    case PipelineStage::kPrep: return "prep";
    case PipelineStage::kPretrain: return "pretrain";
    case PipelineStage::kPairs: return "pairs";
    case PipelineStage::kSft: return "sft";
    case PipelineStage::kRm: return "rm";
    case PipelineStage::kPpo: return "ppo";
    case PipelineStage::kAttack: return "attack";
    case PipelineStage::kEval: return "eval";
    case PipelineStage::kAccount: return "account";
  }
  return "unknown";
}

PipelineStage ParsePipelineStage(std::string_view name) {
  for (PipelineStage s : kOrder) {
    if (PipelineStageName(s) == name) return s;
  }
  Fail(ErrorCode::kInvalidArgument, "unknown stage " + std::string(name));
}

const std::vector<PipelineStage>& AllPipelineStages() {
  static const std::vector<PipelineStage> stages(std::begin(kOrder), std::end(kOrder));
  return stages;
}

RunDir OpenRunDir(const RunConfig& config) {
  return OpenRunDir(config, OutputRoot() / RunId(config));
}

RunDir OpenRunDir(const RunConfig& config, const fs::path& root) {
  RunDir dir(root);
  for (const char* sub : {"data", "checkpoints", "metrics", "logs"}) {
    fs::create_directories(root / sub);
  }
  if (fs::exists(dir.snapshot())) {
    std::ifstream in(dir.snapshot(), std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    Require(buf.str() == config.source_text, ErrorCode::kConfigInvalid,
            "run directory " + root.string() + " belongs to a different config");
  } else {
    std::ofstream(dir.snapshot(), std::ios::binary) << config.source_text;
  }
  return dir;
}

void RunStage(PipelineStage stage, const RunConfig& config, const RunDir& dir) {
  switch (stage) {
    case PipelineStage::kPrep: return Prep(config, dir);
    case PipelineStage::kPretrain: return Pretrain(config, dir);
    case PipelineStage::kPairs: return Pairs(config, dir);
    case PipelineStage::kSft: return Sft(config, dir);
    case PipelineStage::kRm: return Rm(config, dir);
    case PipelineStage::kPpo: return Ppo(config, dir);
    case PipelineStage::kAttack: return Attack(config, dir);
    case PipelineStage::kEval: return Eval(config, dir);
    case PipelineStage::kAccount: return Account(config, dir);
  }
}

bool StageComplete(PipelineStage stage, const RunConfig&, const RunDir& dir) {
  for (const fs::path& p : StageOutputs(stage, dir)) {
    if (!fs::exists(p)) return false;
  }
  return true;
}

void RunPipeline(const RunConfig& config, const RunDir& dir, bool resume) {
  for (PipelineStage stage : kOrder) {
    if (resume && StageComplete(stage, config, dir)) {
      Log(dir, stage, "outputs present, skipped");
      continue;
    }
    RunStage(stage, config, dir);
  }
}

SftResult DpSft(const Model& base, std::span<const DialogueExample> corpus,
                const DpSpec& spec, const SftSettings& settings,
                double target_epsilon, uint64_t seed, const fs::path& audit_log) {
  spec.Validate();
  Require(!corpus.empty(), ErrorCode::kInvalidArgument, "empty SFT corpus");
  const Budget budget = EpsilonFor(spec.sampling_rate, spec.noise_multiplier, spec.steps,
                                   spec.delta, Stage::kSft);
  Require(budget.epsilon <= target_epsilon * (1.0 + 1e-9), ErrorCode::kBudgetViolation,
          "SFT spec exceeds its epsilon target");
  SftResult result;
  result.model = base;
  Model& model = result.model;
  const AdapterSettings& a = settings.adapter;
  if (a.rank > 0) {
    AttachAdapters(model, a.rank, a.alpha, a.dropout, a.targets, DeriveSeed(seed, 1));
  }
  std::vector<TokenSeq> data;
  data.reserve(corpus.size());
  for (const auto& e : corpus) data.push_back(EncodeDialogue(e.patient_text, e.doctor_text));
  const bool dropout = model.config.adapter_dropout > 0.0;
  OptimState state(settings.learning_rate, DeriveSeed(seed, 2));
  RunDpSteps(
      model, data.size(), spec, state, spec.steps,
      [&](std::span<const std::size_t> idx, int64_t step) {
        std::vector<TokenSeq> batch;
        batch.reserve(idx.size());
        for (std::size_t i : idx) batch.push_back(data[i]);
        return PerExampleGrads(model, batch, LossKind::kNllResponseOnly, Exec::kParallel,
                               dropout, DeriveSeed(DeriveSeed(seed, 3), step));
      },
      [&](const StepAudit& audit, std::span<const ExampleGrad> batch) {
        if (!audit_log.empty()) AppendStepAudit(audit_log, audit);
        SftCurvePoint p;
        p.step = audit.step;
        p.batch_size = audit.batch_size;
        p.fraction_clipped = audit.fraction_clipped;
        for (const ExampleGrad& g : batch) p.mean_loss += g.loss;
        if (!batch.empty()) p.mean_loss /= static_cast<double>(batch.size());
        result.curve.push_back(p);
      });
  return result;
}

void WriteSftCurve(const fs::path& path, std::span<const SftCurvePoint> curve) {
  std::ofstream out = OpenCsv(path, "step,batch_size,mean_loss,fraction_clipped");
  for (const SftCurvePoint& p : curve) {
    out << p.step << ',' << p.batch_size << ',' << Num(p.mean_loss) << ','
        << Num(p.fraction_clipped) << '\n';
  }
}

std::string ResponseText(const TokenSeq& seq) {
  std::vector<int> fresh(seq.tokens.begin() + seq.prompt_len, seq.tokens.end());
  std::string text = Detokenize(fresh);
  const std::size_t nl = text.find('\n');
  if (nl != std::string::npos) text.resize(nl);
  const std::size_t b = text.find_first_not_of(' ');
  if (b == std::string::npos) return "";
  const std::size_t e = text.find_last_not_of(' ');
  return text.substr(b, e - b + 1);
}

RewardFn MakeRewardFn(const Model& reward_model) {
  return [&reward_model](const TokenSeq& seq) {
    TokenSeq scored;
    scored.prompt_len = seq.prompt_len;
    scored.tokens.assign(seq.tokens.begin(), seq.tokens.begin() + seq.prompt_len);
    for (std::size_t t = seq.prompt_len; t < seq.size(); ++t) {
      const int tok = seq.tokens[t];
      if (tok == kEosToken || tok == '\n') break;
      scored.tokens.push_back(tok);
    }
    if (scored.size() >= static_cast<std::size_t>(reward_model.config.max_seq_len)) {
      scored.tokens.resize(reward_model.config.max_seq_len - 1);
    }
    scored.tokens.push_back(kEosToken);
    return RewardScore(reward_model, scored);
  };
}

void WriteCanaries(const fs::path& path, std::span<const Canary> canaries) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  Require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  for (const Canary& c : canaries) {
    out << json{{"id", c.id}, {"secret", c.secret}, {"repetitions", c.repetitions}}.dump()
        << '\n';
  }
}

std::vector<Canary> ReadCanaries(const fs::path& path) {
  std::ifstream in(path);
  Require(in.good(), ErrorCode::kMissingPrerequisite, "cannot read " + path.string());
  std::vector<Canary> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Canary c;
      c.id = j.at("id").get<std::string>();
      c.secret = j.at("secret").get<std::string>();
      c.repetitions = j.at("repetitions").get<int>();
      out.push_back(c);
    } catch (const json::exception& e) {
      Fail(ErrorCode::kIo, "malformed canary line: " + line);
    }
  }
  return out;
}

}  // namespace dprlhf
