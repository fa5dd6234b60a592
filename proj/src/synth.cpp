#include "synth.hpp"

#include <array>
#include <cstdio>

namespace mmsrarec::synth {

namespace {

constexpr std::array<std::array<const char*, 8>, 6> kThemes = {{
    {"wave", "coral", "tide", "reef", "shell", "harbor", "anchor", "sail"},
    {"pine", "moss", "fern", "oak", "cedar", "trail", "acorn", "timber"},
    {"dune", "cactus", "mesa", "sand", "canyon", "mirage", "sage", "adobe"},
    {"glacier", "frost", "tundra", "snow", "polar", "icicle", "aurora", "fjord"},
    {"metro", "neon", "loft", "skyline", "subway", "brick", "plaza", "tower"},
    {"tulip", "rose", "hedge", "bloom", "petal", "ivy", "orchard", "meadow"},
}};

constexpr std::array<const char*, 10> kNouns = {"lamp",   "mug",   "blanket", "poster", "pillow",
                                                "vase",   "clock", "rug",     "towel",  "candle"};
constexpr std::array<const char*, 8> kColors = {"red",   "blue", "green", "amber",
                                                "ivory", "teal", "black", "white"};
constexpr std::array<const char*, 10> kFillers = {"soft",    "classic", "modern", "handmade",
                                                  "durable", "gift",    "premium", "compact",
                                                  "cozy",    "sturdy"};
constexpr std::int64_t kEpoch = 1700000000;

std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

std::string padded(std::size_t v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*zu", width, v);
  return buf;
}

// Two distinct indices below n.
std::pair<std::size_t, std::size_t> two_of(Rng& rng, std::size_t n) {
  const std::size_t a = rng.uniform_index(n);
  std::size_t b = rng.uniform_index(n - 1);
  if (b >= a) ++b;
  return {a, b};
}

SynthCorpus planted(const SynthOptions& o) {
  const std::size_t n_items = o.items ? o.items : 50;
  const std::size_t n_users = o.users ? o.users : 500;
  const std::size_t lo = o.min_length ? o.min_length : 8;
  const std::size_t hi = o.max_length ? o.max_length : 14;
  if (n_items < 2 || lo > hi) throw invalid_argument("bad planted-sequential options");

  SynthCorpus c;
  Rng item_rng(derive_seed(o.seed, {"planted-items"}));
  for (std::size_t i = 0; i < n_items; ++i) {
    const std::string code = padded(i, 2);
    const auto noun = kNouns[item_rng.uniform_index(kNouns.size())];
    const auto color = kColors[item_rng.uniform_index(kColors.size())];
    c.catalog.add({"p" + code, capitalize(color) + " " + noun + " no " + code,
                   std::string(kFillers[item_rng.uniform_index(kFillers.size())]) + " " + noun,
                   std::string(color) + " " + noun});
  }
  for (std::size_t u = 0; u < n_users; ++u) {
    const std::string uid = "u" + padded(u, 4);
    Rng rng(derive_seed(o.seed, {"planted-user", uid}));
    const std::size_t start = rng.uniform_index(n_items);
    const std::size_t len = lo + rng.uniform_index(hi - lo + 1);
    for (std::size_t t = 0; t < len; ++t) {
      c.interactions.push_back({uid, c.catalog[(start + t) % n_items].item_id,
                                kEpoch + static_cast<std::int64_t>(t) * 3600});
    }
  }
  return c;
}

SynthCorpus clustered(const SynthOptions& o) {
  const std::size_t n_users = o.users ? o.users : 2000;
  const std::size_t lo = o.min_length ? o.min_length : 6;
  const std::size_t hi = o.max_length ? o.max_length : 9;
  const std::size_t per = o.items_per_cluster;
  if (o.clusters < 1 || o.clusters > kThemes.size()) {
    throw invalid_argument("clustered-taste supports 1.." + std::to_string(kThemes.size()) +
                           " clusters");
  }
  if (per < 2 || lo > hi) throw invalid_argument("bad clustered-taste options");
  if (!(o.noise >= 0.0 && o.noise <= 1.0)) throw invalid_argument("noise must be in [0, 1]");

  SynthCorpus c;
  Rng item_rng(derive_seed(o.seed, {"clustered-items"}));
  for (std::size_t k = 0; k < o.clusters; ++k) {
    const auto& theme = kThemes[k];
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t g = k * per + i;
      const std::string code = "m" + padded(g, 3);
      const std::string noun = kNouns[item_rng.uniform_index(kNouns.size())];
      const auto [t1, t2] = two_of(item_rng, theme.size());
      const auto [f1, f2] = two_of(item_rng, kFillers.size());
      const auto [c1, c2] = two_of(item_rng, theme.size());
      const std::string title =
          capitalize(theme[t1]) + " " + theme[t2] + " " + noun + " " + code;
      const std::string desc = code + " " + noun + " " +
                               theme[item_rng.uniform_index(theme.size())] + " " +
                               kFillers[f1] + " " + kFillers[f2];
      const std::string caption = std::string(kColors[item_rng.uniform_index(kColors.size())]) +
                                  " " + noun + " " + theme[c1] + " " + theme[c2];
      c.catalog.add({"i" + padded(g, 3), title, desc, caption});
    }
  }
  const std::size_t total = c.catalog.size();
  for (std::size_t u = 0; u < n_users; ++u) {
    const std::string uid = "u" + padded(u, 5);
    Rng rng(derive_seed(o.seed, {"clustered-user", uid}));
    const std::size_t k = rng.uniform_index(o.clusters);
    const std::size_t start = rng.uniform_index(per);
    const std::size_t len = lo + rng.uniform_index(hi - lo + 1);
    c.user_cluster[uid] = k;
    for (std::size_t t = 0; t < len; ++t) {
      std::size_t g = k * per + (start + t) % per;
      if (o.noise > 0.0 && rng.uniform01() < o.noise) g = rng.uniform_index(total);
      c.interactions.push_back(
          {uid, c.catalog[g].item_id, kEpoch + static_cast<std::int64_t>(t) * 3600});
    }
  }
  return c;
}

}  // namespace

SynthCorpus synth_corpus(const SynthOptions& options) {
  if (options.profile == "planted-sequential") return planted(options);
  if (options.profile == "clustered-taste") return clustered(options);
  throw invalid_argument("unknown synthetic profile: " + options.profile +
                         " (expected planted-sequential or clustered-taste)");
}

void write_synth(const std::filesystem::path& dir, const SynthCorpus& corpus) {
  corpus::write_items(dir / "items.jsonl", corpus.catalog);
  corpus::write_interactions(dir / "interactions.jsonl", corpus.interactions);
}

}  // namespace mmsrarec::synth
