#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "st5/evaluation.hpp"
#include "st5/trainer.hpp"

// Template-generated toy language. A meaning fills four slots (subject,
// verb, object, place) with concept ids; every concept has several surface
// forms, and sentences are rendered through one of several word orders.
namespace st5::synth {

inline constexpr int kSlots = 4;
inline constexpr int kConcepts = 8;
inline constexpr int kForms = 3;

using Meaning = std::array<int, kSlots>;

Meaning random_meaning(std::mt19937_64& rng);

// Copy of m with exactly `changed` slots set to a different concept.
Meaning perturb(const Meaning& m, int changed, std::mt19937_64& rng);

// Surface forms drawn from the first `forms` synonyms of each concept.
std::string render(const Meaning& m, std::mt19937_64& rng, int forms = kForms);
std::string render_question(const Meaning& m, std::mt19937_64& rng, int forms = kForms);

int matching_slots(const Meaning& a, const Meaning& b);

// Two independent renderings of the same meaning.
std::vector<PairRecord> paraphrase_pairs(std::size_t n, std::uint64_t seed);

// Question rendering -> answer rendering, across all synonyms.
std::vector<PairRecord> qa_pairs(std::size_t n, std::uint64_t seed);

// premise, entailment (same meaning) and contradiction (one slot changed),
// restricted to the first `forms` synonyms.
std::vector<PairRecord> nli_triples(std::size_t n, std::uint64_t seed, int forms = 1);

// Graded pairs: k matching slots out of 4, score 5k/4, k uniform.
std::vector<STSExample> graded_sts(std::size_t n, std::uint64_t seed);

// Binary task: does the subject name a person or an animal.
TransferDataset subject_transfer(std::size_t n_train, std::size_t n_test, std::uint64_t seed);

}  // namespace st5::synth
