#include "st5/synthetic.hpp"

namespace st5::synth {

namespace {

using Lexicon = std::array<std::array<const char*, kForms>, kConcepts>;

// subjects 0-3 are animals, 4-7 people
constexpr Lexicon kSubjects = {{
    {"cat", "kitty", "feline"},
    {"dog", "puppy", "hound"},
    {"horse", "pony", "stallion"},
    {"bird", "fowl", "songbird"},
    {"teacher", "tutor", "instructor"},
    {"farmer", "grower", "rancher"},
    {"doctor", "physician", "medic"},
    {"sailor", "mariner", "seaman"},
}};

constexpr Lexicon kVerbs = {{
    {"chased", "pursued", "hunted"},
    {"found", "discovered", "located"},
    {"carried", "hauled", "lugged"},
    {"watched", "observed", "eyed"},
    {"painted", "coloured", "decorated"},
    {"bought", "purchased", "acquired"},
    {"broke", "smashed", "shattered"},
    {"cleaned", "washed", "scrubbed"},
}};

constexpr Lexicon kObjects = {{
    {"ball", "sphere", "orb"},
    {"car", "automobile", "vehicle"},
    {"box", "crate", "carton"},
    {"book", "novel", "volume"},
    {"boat", "ship", "vessel"},
    {"cup", "mug", "beaker"},
    {"rope", "cord", "cable"},
    {"lamp", "lantern", "torch"},
}};

constexpr Lexicon kPlaces = {{
    {"garden", "yard", "lawn"},
    {"kitchen", "galley", "cookhouse"},
    {"park", "meadow", "green"},
    {"station", "depot", "terminal"},
    {"market", "bazaar", "souk"},
    {"river", "stream", "creek"},
    {"forest", "woods", "grove"},
    {"school", "academy", "college"},
}};

int pick(std::mt19937_64& rng, int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); }

struct Words {
  std::string s, v, o, p;
};

Words words(const Meaning& m, std::mt19937_64& rng, int forms) {
  if (forms < 1 || forms > kForms) throw ParameterError("forms must lie in [1, " + std::to_string(kForms) + "]");
  return {kSubjects[m[0]][pick(rng, forms)], kVerbs[m[1]][pick(rng, forms)], kObjects[m[2]][pick(rng, forms)],
          kPlaces[m[3]][pick(rng, forms)]};
}

}  // namespace

Meaning random_meaning(std::mt19937_64& rng) {
  Meaning m{};
  for (int& slot : m) slot = pick(rng, kConcepts);
  return m;
}

Meaning perturb(const Meaning& m, int changed, std::mt19937_64& rng) {
  if (changed < 0 || changed > kSlots) throw ParameterError("cannot change " + std::to_string(changed) + " slots");
  std::array<int, kSlots> order{0, 1, 2, 3};
  for (int i = kSlots; i > 1; --i) std::swap(order[i - 1], order[pick(rng, i)]);
  Meaning out = m;
  for (int k = 0; k < changed; ++k) {
    const int slot = order[k];
    out[slot] = (m[slot] + 1 + pick(rng, kConcepts - 1)) % kConcepts;
  }
  return out;
}

std::string render(const Meaning& m, std::mt19937_64& rng, int forms) {
  const Words w = words(m, rng, forms);
  switch (pick(rng, 4)) {
    case 0: return "the " + w.s + " " + w.v + " the " + w.o + " in the " + w.p;
    case 1: return "in the " + w.p + " the " + w.s + " " + w.v + " the " + w.o;
    case 2: return "the " + w.o + " was " + w.v + " by the " + w.s + " in the " + w.p;
    default: return "the " + w.s + " in the " + w.p + " " + w.v + " the " + w.o;
  }
}

std::string render_question(const Meaning& m, std::mt19937_64& rng, int forms) {
  const Words w = words(m, rng, forms);
  if (pick(rng, 2) == 0) return "which " + w.o + " was " + w.v + " by the " + w.s + " in the " + w.p + " ?";
  return "who " + w.v + " the " + w.o + " in the " + w.p + " , the " + w.s + " ?";
}

int matching_slots(const Meaning& a, const Meaning& b) {
  int k = 0;
  for (int i = 0; i < kSlots; ++i) k += a[i] == b[i];
  return k;
}

std::vector<PairRecord> paraphrase_pairs(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<PairRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Meaning m = random_meaning(rng);
    std::string a = render(m, rng);
    std::string b = render(m, rng);
    out.push_back({std::move(a), std::move(b), std::nullopt});
  }
  return out;
}

std::vector<PairRecord> qa_pairs(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<PairRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Meaning m = random_meaning(rng);
    std::string q = render_question(m, rng);
    std::string a = render(m, rng);
    out.push_back({std::move(q), std::move(a), std::nullopt});
  }
  return out;
}

std::vector<PairRecord> nli_triples(std::size_t n, std::uint64_t seed, int forms) {
  std::mt19937_64 rng(seed);
  std::vector<PairRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Meaning m = random_meaning(rng);
    const Meaning contra = perturb(m, 1, rng);
    std::string premise = render(m, rng, forms);
    std::string entail = render(m, rng, forms);
    std::string neg = render(contra, rng, forms);
    out.push_back({std::move(premise), std::move(entail), std::move(neg)});
  }
  return out;
}

std::vector<STSExample> graded_sts(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<STSExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Meaning a = random_meaning(rng);
    const int k = pick(rng, kSlots + 1);
    const Meaning b = perturb(a, kSlots - k, rng);
    std::string sa = render(a, rng);
    std::string sb = render(b, rng);
    out.push_back({std::move(sa), std::move(sb), 5.0 * k / kSlots});
  }
  return out;
}

TransferDataset subject_transfer(std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TransferDataset ds;
  ds.label_names = {"animal", "person"};
  auto fill = [&](TransferSplit& split, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      const Meaning m = random_meaning(rng);
      split.texts.push_back(render(m, rng));
      split.labels.push_back(m[0] < kConcepts / 2 ? 0 : 1);
    }
  };
  fill(ds.train, n_train);
  fill(ds.test, n_test);
  return ds;
}

}  // namespace st5::synth
