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


#include "dprlhf/pipeline/synth.h"

#include <array>
#include <cstdio>
#include <string_view>

#include "dprlhf/evalmetrics/metrics.h"

namespace dprlhf {
namespace {

struct Condition {
  std::string_view name;
  std::array<std::string_view, 4> symptoms;
  std::array<std::string_view, 2> tests;
  std::array<std::string_view, 2> meds;
};

constexpr std::array<Condition, 16> kConditions = {{
    {"asthma", {"a cough", "dyspnea", "chest tightness", "wheezing"},
     {"spirometry", "chest x-ray"}, {"albuterol", "fluticasone"}},
    {"bronchitis", {"a cough", "fever", "fatigue", "chest pain"},
     {"chest x-ray", "blood test"}, {"acetaminophen", "azithromycin"}},
    {"migraine", {"headaches", "nausea", "blurred vision", "dizziness"},
     {"mri", "ct scan"}, {"sumatriptan", "ibuprofen"}},
    {"hypertension", {"headaches", "dizziness", "palpitations", "blurred vision"},
     {"blood test", "electrocardiogram"},
     {"lisinopril", "amlodipine"}},
    {"gastritis", {"abdominal pain", "nausea", "vomiting", "heartburn"},
     {"endoscopy", "blood test"}, {"omeprazole", "famotidine"}},
    {"acid reflux", {"heartburn", "chest pain", "a sour taste", "a cough"},
     {"endoscopy", "ph test"}, {"pantoprazole", "omeprazole"}},
    {"urinary tract infection",
     {"pain when I urinate", "frequent urination", "fever", "back pain"},
     {"urinalysis", "urine culture"}, {"nitrofurantoin", "cephalexin"}},
    {"hypothyroidism", {"fatigue", "weight gain", "dry skin", "low mood"},
     {"thyroid function test", "blood test"}, {"levothyroxine", "vitamin d"}},
    {"anemia", {"fatigue", "dizziness", "pale skin", "palpitations"},
     {"complete blood count", "blood test"}, {"iron supplements", "folic acid"}},
    {"sinusitis", {"facial pain", "a blocked nose", "headaches", "fever"},
     {"ct scan", "physical exam"}, {"amoxicillin", "fluticasone"}},
    {"type 2 diabetes", {"thirst", "frequent urination", "fatigue", "blurred vision"},
     {"hba1c", "blood test"}, {"metformin", "insulin"}},
    {"gout", {"joint pain", "a swollen toe", "redness", "fever"},
     {"blood test", "x-ray"}, {"colchicine", "allopurinol"}},
    {"sciatica", {"back pain", "leg pain", "numbness", "weakness"},
     {"mri", "x-ray"}, {"physical therapy", "naproxen"}},
    {"eczema", {"a rash", "itchy skin", "dry skin", "redness"},
     {"skin exam", "allergy test"}, {"hydrocortisone", "cetirizine"}},
    {"anxiety", {"palpitations", "trouble sleeping", "low mood", "dizziness"},
     {"electrocardiogram", "thyroid function test"}, {"sertraline", "escitalopram"}},
    {"otitis media", {"ear pain", "fever", "reduced hearing", "dizziness"},
     {"ear exam", "hearing test"}, {"amoxicillin", "acetaminophen"}},
}};

constexpr std::array<std::string_view, 6> kDurations = {
    "two days", "three days", "a week", "two weeks", "a month", "some months"};

constexpr std::array<std::string_view, 5> kQuestions = {
    "What could this be?", "Should I be worried?", "What should I do?",
    "Do I need any tests?", "Is this serious?"};

constexpr std::array<std::string_view, 4> kClosings = {
    "Come back if it gets worse.", "Follow up in one week.",
    "See me after the results.", "Rest and drink water."};

constexpr std::array<std::string_view, 6> kGeneric = {
    "It is hard to say without an exam. Rest, drink water and see someone soon.",
    "Many things can cause this. Please talk to a health worker for advice.",
    "I would suggest rest and fluids. If you feel worse, visit a clinic soon.",
    "This could be many things. It is best to get checked in person soon.",
    "Take care of yourself and rest. A clinic visit may help if this goes on.",
    "There are many possible reasons. Keep an eye on it and ask for help.",
};

template <typename T, std::size_t N>
const T& Pick(const std::array<T, N>& items, Rng& rng) {
  return items[rng.UniformInt(N)];
}

std::string Str(std::string_view s) { return std::string(s); }

std::string PatientText(const Condition& c, Rng& rng) {
  const std::size_t i = rng.UniformInt(c.symptoms.size());
  std::size_t j = rng.UniformInt(c.symptoms.size() - 1);
  if (j >= i) ++j;
  const std::string s1 = Str(c.symptoms[i]);
  const std::string s2 = Str(c.symptoms[j]);
  const std::string dur = Str(Pick(kDurations, rng));
  const std::string q = Str(Pick(kQuestions, rng));
  switch (rng.UniformInt(3)) {
    case 0: return "I have had " + s1 + " and " + s2 + " for " + dur + ". " + q;
    case 1: return "For " + dur + " I have had " + s1 + " with " + s2 + ". " + q;
    default: return "I have " + s1 + " and " + s2 + ", for " + dur + " now. " + q;
  }
}

std::string ExpertText(const Condition& c, Rng& rng) {
  const std::string cond = Str(c.name);
  const std::string test = Str(Pick(c.tests, rng));
  const std::string med = Str(Pick(c.meds, rng));
  const std::string close = Str(Pick(kClosings, rng));
  switch (rng.UniformInt(3)) {
    case 0:
      return "This may be " + cond + ". I suggest a " + test + " and " + med + ". " + close;
    case 1:
      return "It sounds like " + cond + ". Get a " + test + ", " + med + " can help. " +
             close;
    default:
      return "Likely " + cond + ". A " + test + " will confirm it, then start " + med +
             ". " + close;
  }
}

}  // namespace

DialogueExample SynthDialogue(const std::string& id, ResponseStyle style,
                              Rng& rng) {
  const Condition& c = Pick(kConditions, rng);
  DialogueExample e;
  e.conversation_id = id;
  e.patient_text = PatientText(c, rng);
  e.doctor_text = style == ResponseStyle::kExpert ? ExpertText(c, rng)
                                                  : Str(Pick(kGeneric, rng));
  return e;
}

SynthCorpus GenerateSyntheticCorpus(const SynthConfig& config) {
  Require(config.dialogues >= 0 && config.canaries >= 0,
          ErrorCode::kConfigInvalid, "corpus sizes must be >= 0");
  Require(config.generic_fraction >= 0.0 && config.generic_fraction <= 1.0,
          ErrorCode::kConfigInvalid, "generic_fraction must be in [0, 1]");
  SynthCorpus out;
  Rng rng(DeriveSeed(config.seed, 0));
  out.dialogues.reserve(config.dialogues);
  for (int i = 0; i < config.dialogues; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "-%06d", i);
    const ResponseStyle style = rng.Bernoulli(config.generic_fraction)
                                    ? ResponseStyle::kGeneric
                                    : ResponseStyle::kExpert;
    out.dialogues.push_back(SynthDialogue(config.id_prefix + id, style, rng));
  }
  if (config.canaries > 0) {
    Rng canary_rng(DeriveSeed(config.seed, 1));
    out.canaries =
        MakeCanaries(config.canaries, config.canary_repetitions, canary_rng);
    out.dialogues = InsertCanaries(out.dialogues, out.canaries);
  }
  return out;
}

const std::set<std::string>& TemplateVocabulary() {
  static const std::set<std::string>* vocab = [] {
    auto* words = new std::set<std::string>();
    auto add = [&](std::string_view text) {
      for (std::string& w : MatchWords(text)) words->insert(std::move(w));
    };
    for (const Condition& c : kConditions) {
      add(c.name);
      for (auto s : c.symptoms) add(s);
      for (auto s : c.tests) add(s);
      for (auto s : c.meds) add(s);
    }
    for (auto s : kDurations) add(s);
    for (auto s : kQuestions) add(s);
    for (auto s : kClosings) add(s);
    for (auto s : kGeneric) add(s);
    add("I have had and for. For I have had with. I have and, for now.");
    add("This may be. I suggest a and. It sounds like. Get a, can help.");
    add("Likely. A will confirm it, then start.");
    return words;
  }();
  return *vocab;
}

}  // namespace dprlhf
