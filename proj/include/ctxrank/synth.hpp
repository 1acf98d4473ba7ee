#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ctxrank/rng.hpp"
#include "ctxrank/session.hpp"
#include "ctxrank/vec.hpp"

namespace ctxrank {

// Everything about the synthetic world: vocabulary/product/user counts, the
// click and purchase models, and the initial (production stand-in) ranker.
// The hidden mechanism is: products cluster around latent topic centers;
// titles mix shared category words (sampled near the topic center) with
// attribute words (sampled near the product's residual direction within the
// topic); each session targets one topic and carries a hidden within-topic
// preference; queries use category words only, so they locate the topic but
// never the preference; the initial ranker sees only lexical overlap and
// popularity; clicks and purchases see the preference. Re-rankers that read
// clicks can therefore recover signal the initial ranker provably lacks.
struct GenConfig {
  std::uint64_t seed = 42;
  int vocab_size = 3000;
  int n_products = 2000;
  int n_users = 500;
  int n_sessions = 10000;
  int n_weeks = 40;
  int page_size = 20;
  int pages_per_session = 5;
  int latent_dim = 8;
  int n_topics = 10;                 // products cluster around this many latent topic centers
  double topic_concentration = 0.7;  // product noise radius around the assigned center
  double topic_word_fraction = 0.4;       // title slots drawn from the topic's shared vocabulary
  double topic_title_temperature = 0.05;  // shared-vocabulary softmax temperature (sharp)
  double user_topic_spread = 0.5;    // long-term vector noise radius around the favorite topic
  double session_topic_spread = 0.75;  // session preference noise radius around the session topic
  double topic_loyalty = 0.6;        // probability a named user's session targets their favorite topic
  double query_topic_fraction = 1.0;  // query slots drawn from the topic's shared vocabulary
  int title_len_min = 8;
  int title_len_max = 14;
  int query_len_min = 2;
  int query_len_max = 4;
  double click_noise = 0.01;
  double purchase_temperature = 0.05;

  // shape knobs; defaults tuned so clicks are selective enough to carry the
  // within-topic preference and every baseline direction is resolvable
  double title_temperature = 0.08;
  double query_temperature = 0.30;
  double user_mix = 0.30;            // long-term vector weight inside the session preference
  double anonymous_fraction = 0.05;
  double lexical_weight = 6.0;       // initial ranker: weight of log(1+tf) per query term
  double popularity_boost = 0.15;    // initial ranker: weight of centered log-Zipf mass
  double ranker_noise = 0.3;         // initial ranker: gaussian noise sigma
  double click_sharpness = 20.0;
  double click_midpoint = 0.78;  // roughly the median in-topic preference-product cosine
  double zipf_exponent = 0.8;
  double purchase_pop_weight = 0.25;  // purchase logits: centered log-Zipf coefficient
  double two_purchase_prob = 0.35;
  double late_purchase_fraction = 1.0;  // fraction of sessions with purchases forced past the first clicked page

  void validate() const {
    if (vocab_size < 1 || n_products < 1 || n_users < 1 || n_sessions < 1 || n_weeks < 1 ||
        page_size < 1 || pages_per_session < 2 || latent_dim < 1 || n_topics < 1)
      throw std::invalid_argument("gen config: counts must be positive (pages_per_session >= 2)");
    if (topic_concentration < 0.0)
      throw std::invalid_argument("gen config: topic_concentration must be non-negative");
    if (title_len_min < 1 || title_len_max < title_len_min || query_len_min < 1 ||
        query_len_max < query_len_min)
      throw std::invalid_argument("gen config: bad title/query length range");
    if (n_products < page_size * pages_per_session)
      throw std::invalid_argument("gen config: catalog smaller than one session's result list");
    for (double p : {click_noise, anonymous_fraction, two_purchase_prob, late_purchase_fraction,
                     user_mix, topic_word_fraction, topic_loyalty, query_topic_fraction}) {
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("gen config: probability outside [0,1]");
    }
    if (user_topic_spread < 0.0 || session_topic_spread < 0.0)
      throw std::invalid_argument("gen config: topic spreads must be non-negative");
    if (!(purchase_temperature > 0.0) || !(title_temperature > 0.0) ||
        !(query_temperature > 0.0) || !(topic_title_temperature > 0.0))
      throw std::invalid_argument("gen config: temperatures must be positive");
    if (!(ranker_noise >= 0.0) || !(zipf_exponent >= 0.0))
      throw std::invalid_argument("gen config: bad ranker parameters");
  }
};

inline GenConfig gen_config_from_json(const nlohmann::json& j) {
  GenConfig c;
  c.seed = j.value("seed", c.seed);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.n_products = j.value("n_products", c.n_products);
  c.n_users = j.value("n_users", c.n_users);
  c.n_sessions = j.value("n_sessions", c.n_sessions);
  c.n_weeks = j.value("n_weeks", c.n_weeks);
  c.page_size = j.value("page_size", c.page_size);
  c.pages_per_session = j.value("pages_per_session", c.pages_per_session);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.n_topics = j.value("n_topics", c.n_topics);
  c.topic_concentration = j.value("topic_concentration", c.topic_concentration);
  c.topic_word_fraction = j.value("topic_word_fraction", c.topic_word_fraction);
  c.topic_title_temperature = j.value("topic_title_temperature", c.topic_title_temperature);
  c.user_topic_spread = j.value("user_topic_spread", c.user_topic_spread);
  c.session_topic_spread = j.value("session_topic_spread", c.session_topic_spread);
  c.topic_loyalty = j.value("topic_loyalty", c.topic_loyalty);
  c.query_topic_fraction = j.value("query_topic_fraction", c.query_topic_fraction);
  c.title_len_min = j.value("title_len_min", c.title_len_min);
  c.title_len_max = j.value("title_len_max", c.title_len_max);
  c.query_len_min = j.value("query_len_min", c.query_len_min);
  c.query_len_max = j.value("query_len_max", c.query_len_max);
  c.click_noise = j.value("click_noise", c.click_noise);
  c.purchase_temperature = j.value("purchase_temperature", c.purchase_temperature);
  c.title_temperature = j.value("title_temperature", c.title_temperature);
  c.query_temperature = j.value("query_temperature", c.query_temperature);
  c.user_mix = j.value("user_mix", c.user_mix);
  c.anonymous_fraction = j.value("anonymous_fraction", c.anonymous_fraction);
  c.lexical_weight = j.value("lexical_weight", c.lexical_weight);
  c.popularity_boost = j.value("popularity_boost", c.popularity_boost);
  c.ranker_noise = j.value("ranker_noise", c.ranker_noise);
  c.click_sharpness = j.value("click_sharpness", c.click_sharpness);
  c.click_midpoint = j.value("click_midpoint", c.click_midpoint);
  c.zipf_exponent = j.value("zipf_exponent", c.zipf_exponent);
  c.purchase_pop_weight = j.value("purchase_pop_weight", c.purchase_pop_weight);
  c.two_purchase_prob = j.value("two_purchase_prob", c.two_purchase_prob);
  c.late_purchase_fraction = j.value("late_purchase_fraction", c.late_purchase_fraction);
  c.validate();
  return c;
}

inline nlohmann::ordered_json gen_config_to_json(const GenConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["vocab_size"] = c.vocab_size;
  j["n_products"] = c.n_products;
  j["n_users"] = c.n_users;
  j["n_sessions"] = c.n_sessions;
  j["n_weeks"] = c.n_weeks;
  j["page_size"] = c.page_size;
  j["pages_per_session"] = c.pages_per_session;
  j["latent_dim"] = c.latent_dim;
  j["n_topics"] = c.n_topics;
  j["topic_concentration"] = c.topic_concentration;
  j["topic_word_fraction"] = c.topic_word_fraction;
  j["topic_title_temperature"] = c.topic_title_temperature;
  j["user_topic_spread"] = c.user_topic_spread;
  j["session_topic_spread"] = c.session_topic_spread;
  j["topic_loyalty"] = c.topic_loyalty;
  j["query_topic_fraction"] = c.query_topic_fraction;
  j["title_len_min"] = c.title_len_min;
  j["title_len_max"] = c.title_len_max;
  j["query_len_min"] = c.query_len_min;
  j["query_len_max"] = c.query_len_max;
  j["click_noise"] = c.click_noise;
  j["purchase_temperature"] = c.purchase_temperature;
  j["title_temperature"] = c.title_temperature;
  j["query_temperature"] = c.query_temperature;
  j["user_mix"] = c.user_mix;
  j["anonymous_fraction"] = c.anonymous_fraction;
  j["lexical_weight"] = c.lexical_weight;
  j["popularity_boost"] = c.popularity_boost;
  j["ranker_noise"] = c.ranker_noise;
  j["click_sharpness"] = c.click_sharpness;
  j["click_midpoint"] = c.click_midpoint;
  j["zipf_exponent"] = c.zipf_exponent;
  j["purchase_pop_weight"] = c.purchase_pop_weight;
  j["two_purchase_prob"] = c.two_purchase_prob;
  j["late_purchase_fraction"] = c.late_purchase_fraction;
  return j;
}

// Hidden state of the generator. Never serialized next to the log: models
// only ever see titles, queries, clicks, and purchases.
struct LatentWorld {
  int latent_dim = 0;
  std::vector<std::vector<double>> word_vecs;
  std::vector<std::vector<double>> product_vecs;   // index = ItemId - 1
  std::vector<std::vector<double>> user_vecs;      // index = UserId - 1
  std::vector<std::vector<double>> topic_centers;  // cluster directions shared by all draws
  std::vector<int> user_topics;                    // favorite topic per user index
  std::vector<double> zipf_weight;                 // per product index
  std::vector<std::vector<double>> session_prefs;  // per emitted session, by session_id order
};

struct Corpus {
  Catalog catalog;
  std::vector<UserId> users;
  LatentWorld world;
};

namespace synth_detail {

inline std::vector<double> unit_vector(Rng& rng, int dim) {
  std::vector<double> v(dim);
  for (;;) {
    for (double& x : v) x = rng.normal();
    const double n = norm2(v);
    if (n > 1e-12) {
      scale(v, 1.0 / n);
      return v;
    }
  }
}

inline std::string word_token(int index, int width) {
  char buf[24];
  // Vocabulary sizes are bounded well below 10 digits; the clamp keeps the
  // formatter total under the buffer for any int input.
  if (width > 10) width = 10;
  std::snprintf(buf, sizeof(buf), "w%0*d", width, index);
  return buf;
}

inline int token_width(int vocab_size) {
  int width = 1;
  for (int v = vocab_size - 1; v >= 10; v /= 10) ++width;
  return width;
}

// unit vector at `spread` noise radius around a unit center
inline std::vector<double> near_center(Rng& rng, const std::vector<double>& center,
                                       double spread) {
  std::vector<double> v = unit_vector(rng, static_cast<int>(center.size()));
  scale(v, spread);
  axpy(1.0, center, v);
  normalize(v);
  return v;
}

// unit component of v orthogonal to a unit center; falls back to v itself
// when v is (numerically) parallel to the center
inline std::vector<double> residual_direction(const std::vector<double>& v,
                                              const std::vector<double>& center) {
  std::vector<double> r = v;
  axpy(-dot(v, center), center, r);
  const double n = norm2(r);
  if (n < 1e-9) return v;
  scale(r, 1.0 / n);
  return r;
}

}  // namespace synth_detail

inline Corpus generate_corpus(const GenConfig& cfg) {
  cfg.validate();
  Corpus out;
  LatentWorld& w = out.world;
  w.latent_dim = cfg.latent_dim;

  const int width = synth_detail::token_width(cfg.vocab_size);
  std::vector<std::string> tokens(cfg.vocab_size);
  w.word_vecs.resize(cfg.vocab_size);
  for (int i = 0; i < cfg.vocab_size; ++i) {
    tokens[i] = synth_detail::word_token(i, width);
    Rng rng(substream_seed(cfg.seed, stream::kWordVec, i));
    w.word_vecs[i] = synth_detail::unit_vector(rng, cfg.latent_dim);
  }
  // Products cluster around topic centers so same-topic titles share words;
  // assignment by index interleaves popularity ranks evenly across topics.
  w.topic_centers.resize(cfg.n_topics);
  for (int c = 0; c < cfg.n_topics; ++c) {
    Rng rng(substream_seed(cfg.seed, stream::kTopic, c));
    w.topic_centers[c] = synth_detail::unit_vector(rng, cfg.latent_dim);
  }
  w.product_vecs.resize(cfg.n_products);
  for (int p = 0; p < cfg.n_products; ++p) {
    Rng rng(substream_seed(cfg.seed, stream::kProductVec, p));
    w.product_vecs[p] =
        synth_detail::near_center(rng, w.topic_centers[p % cfg.n_topics], cfg.topic_concentration);
  }
  // Users favor one topic; their long-term vector sits near its center so
  // long-term context predicts which cluster their sessions lean toward.
  w.user_vecs.resize(cfg.n_users);
  w.user_topics.resize(cfg.n_users);
  for (int u = 0; u < cfg.n_users; ++u) {
    Rng rng(substream_seed(cfg.seed, stream::kUserVec, u));
    w.user_topics[u] = static_cast<int>(rng.below(cfg.n_topics));
    w.user_vecs[u] =
        synth_detail::near_center(rng, w.topic_centers[w.user_topics[u]], cfg.user_topic_spread);
  }

  // popularity ranks: a seeded permutation, Zipf mass by rank
  w.zipf_weight.assign(cfg.n_products, 0.0);
  {
    std::vector<int> perm(cfg.n_products);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(substream_seed(cfg.seed, stream::kPopularity, 0));
    rng.shuffle(perm);
    for (int rank = 0; rank < cfg.n_products; ++rank) {
      w.zipf_weight[perm[rank]] = std::pow(static_cast<double>(rank + 1), -cfg.zipf_exponent);
    }
  }

  // titles: category slots draw from the topic center's sharp softmax (the
  // shared vocabulary that makes same-topic titles overlap, like type words);
  // the remaining slots draw near the product's residual direction within its
  // topic, so attribute words differentiate products of one category
  std::vector<std::vector<double>> center_logits(cfg.n_topics,
                                                 std::vector<double>(cfg.vocab_size));
  for (int c = 0; c < cfg.n_topics; ++c) {
    for (int i = 0; i < cfg.vocab_size; ++i)
      center_logits[c][i] = dot(w.word_vecs[i], w.topic_centers[c]);
  }
  std::vector<double> logits(cfg.vocab_size);
  std::vector<double> scratch;
  for (int p = 0; p < cfg.n_products; ++p) {
    const std::vector<double> res = synth_detail::residual_direction(
        w.product_vecs[p], w.topic_centers[p % cfg.n_topics]);
    for (int i = 0; i < cfg.vocab_size; ++i) logits[i] = dot(w.word_vecs[i], res);
    const std::vector<double>& shared = center_logits[p % cfg.n_topics];
    Rng rng(substream_seed(cfg.seed, stream::kTitle, p));
    const int len = static_cast<int>(rng.range(cfg.title_len_min, cfg.title_len_max));
    Tokens title;
    title.reserve(len);
    for (int t = 0; t < len; ++t) {
      title.push_back(rng.bernoulli(cfg.topic_word_fraction)
                          ? tokens[rng.sample_softmax(shared, cfg.topic_title_temperature, scratch)]
                          : tokens[rng.sample_softmax(logits, cfg.title_temperature, scratch)]);
    }
    const ItemId id = p + 1;
    out.catalog.products.emplace(id, Product{id, std::move(title)});
  }

  out.users.resize(cfg.n_users);
  std::iota(out.users.begin(), out.users.end(), UserId{1});
  return out;
}

struct GenStats {
  std::uint64_t attempts = 0;
  std::uint64_t emitted = 0;
  double mean_clicks_per_page = 0.0;   // after purchase insertion
  double mean_purchases_per_session = 0.0;
  double anonymous_fraction = 0.0;
};

// Samples sessions until n_sessions of them pass the re-ranking filter
// (purchase on a later page with a click strictly before it). Rejected
// attempts still consume their substreams, so the accepted log is a pure
// function of (config, seed). Appends one preference vector per emitted
// session to world.session_prefs.
inline std::vector<QuerySession> generate_sessions(const GenConfig& cfg, const Catalog& catalog,
                                                   LatentWorld& world,
                                                   GenStats* stats = nullptr) {
  cfg.validate();
  if (static_cast<int>(world.product_vecs.size()) != cfg.n_products ||
      static_cast<int>(world.user_vecs.size()) != cfg.n_users ||
      static_cast<int>(world.word_vecs.size()) != cfg.vocab_size)
    throw std::invalid_argument("generate_sessions: world does not match config");

  const int n_serve = cfg.page_size * cfg.pages_per_session;
  const int width = synth_detail::token_width(cfg.vocab_size);
  std::vector<std::string> tokens(cfg.vocab_size);
  for (int i = 0; i < cfg.vocab_size; ++i) tokens[i] = synth_detail::word_token(i, width);

  // postings over catalog titles for the ranker's lexical component
  std::unordered_map<std::string, std::vector<std::pair<int, int>>> postings;
  for (const auto& [id, product] : catalog.products) {
    std::unordered_map<std::string, int> tf;
    for (const std::string& t : product.title) ++tf[t];
    for (const auto& [t, f] : tf) postings[t].emplace_back(static_cast<int>(id - 1), f);
  }

  std::vector<double> log_pop(cfg.n_products);
  for (int p = 0; p < cfg.n_products; ++p) log_pop[p] = std::log(world.zipf_weight[p]);
  const double mean_lp =
      std::accumulate(log_pop.begin(), log_pop.end(), 0.0) / cfg.n_products;
  for (double& x : log_pop) x -= mean_lp;

  std::vector<QuerySession> sessions;
  sessions.reserve(cfg.n_sessions);
  world.session_prefs.reserve(world.session_prefs.size() + cfg.n_sessions);

  const std::uint64_t max_attempts = 50ull * static_cast<std::uint64_t>(cfg.n_sessions);
  std::uint64_t attempt = 0;
  std::uint64_t total_clicks = 0, total_pages = 0, total_purchases = 0, n_anonymous = 0;

  std::vector<double> query_logits(cfg.vocab_size);
  std::vector<double> ranker_score(cfg.n_products);
  std::vector<double> scratch;
  std::vector<int> top(cfg.n_products);

  // shared-vocabulary logits per topic, identical to the title generator's so
  // topic-slot query words literally match topic-slot title words
  std::vector<std::vector<double>> center_logits(cfg.n_topics,
                                                 std::vector<double>(cfg.vocab_size));
  if (static_cast<int>(world.topic_centers.size()) != cfg.n_topics)
    throw std::invalid_argument("generate_sessions: world topic centers do not match config");
  for (int c = 0; c < cfg.n_topics; ++c) {
    for (int i = 0; i < cfg.vocab_size; ++i)
      center_logits[c][i] = dot(world.word_vecs[i], world.topic_centers[c]);
  }

  while (static_cast<int>(sessions.size()) < cfg.n_sessions) {
    if (++attempt > max_attempts)
      throw std::runtime_error("generate_sessions: attempt budget exhausted; config yields too few filterable sessions");
    const std::uint64_t a = attempt - 1;
    Rng r_pref(substream_seed(cfg.seed, stream::kSession, a, 0));
    Rng r_query(substream_seed(cfg.seed, stream::kSession, a, 1));
    Rng r_rank(substream_seed(cfg.seed, stream::kSession, a, 2));
    Rng r_click(substream_seed(cfg.seed, stream::kSession, a, 3));
    Rng r_buy(substream_seed(cfg.seed, stream::kSession, a, 4));

    const bool anonymous = r_pref.bernoulli(cfg.anonymous_fraction);
    const int user_idx = static_cast<int>(r_pref.below(cfg.n_users));
    const int week = 1 + static_cast<int>(r_pref.below(cfg.n_weeks));
    // The session targets one topic: the user's favorite with prob
    // topic_loyalty, otherwise (and for anonymous sessions) a uniform draw.
    const bool loyal = !anonymous && r_pref.bernoulli(cfg.topic_loyalty);
    const int topic = loyal ? world.user_topics[user_idx]
                            : static_cast<int>(r_pref.below(cfg.n_topics));
    std::vector<double> pref = synth_detail::near_center(r_pref, world.topic_centers[topic],
                                                         cfg.session_topic_spread);
    if (!anonymous) {
      scale(pref, 1.0 - cfg.user_mix);
      axpy(cfg.user_mix, world.user_vecs[user_idx], pref);
      const double n = norm2(pref);
      if (n > 1e-12) scale(pref, 1.0 / n);
    }

    // Queries name the category plus preference color: topic slots draw from
    // the session topic's shared vocabulary, the rest from the preference's
    // residual within the topic (the attribute vocabulary titles also use).
    const std::vector<double> pref_res =
        synth_detail::residual_direction(pref, world.topic_centers[topic]);
    for (int i = 0; i < cfg.vocab_size; ++i) query_logits[i] = dot(world.word_vecs[i], pref_res);
    const int qlen = static_cast<int>(r_query.range(cfg.query_len_min, cfg.query_len_max));
    Tokens query;
    query.reserve(qlen);
    for (int t = 0; t < qlen; ++t) {
      query.push_back(
          r_query.bernoulli(cfg.query_topic_fraction)
              ? tokens[r_query.sample_softmax(center_logits[topic], cfg.topic_title_temperature,
                                              scratch)]
              : tokens[r_query.sample_softmax(query_logits, cfg.query_temperature, scratch)]);
    }

    // initial ranker: lexical overlap + popularity + noise, preference-blind
    for (int p = 0; p < cfg.n_products; ++p) {
      ranker_score[p] = cfg.popularity_boost * log_pop[p] + cfg.ranker_noise * r_rank.normal();
    }
    for (const std::string& t : query) {
      auto it = postings.find(t);
      if (it == postings.end()) continue;
      for (const auto& [p, f] : it->second) {
        ranker_score[p] += cfg.lexical_weight * std::log1p(static_cast<double>(f));
      }
    }
    std::iota(top.begin(), top.end(), 0);
    std::partial_sort(top.begin(), top.begin() + n_serve, top.end(), [&](int x, int y) {
      if (ranker_score[x] != ranker_score[y]) return ranker_score[x] > ranker_score[y];
      return x < y;
    });

    std::vector<Page> pages(cfg.pages_per_session);
    int first_click_page = 0;
    for (int g = 0; g < cfg.pages_per_session; ++g) {
      Page& page = pages[g];
      page.page_no = g + 1;
      page.items.reserve(cfg.page_size);
      for (int s = 0; s < cfg.page_size; ++s) {
        const int p = top[g * cfg.page_size + s];
        const ItemId id = p + 1;
        page.items.push_back(id);
        const double cos = dot(pref, world.product_vecs[p]);
        const double pc = 1.0 / (1.0 + std::exp(-cfg.click_sharpness * (cos - cfg.click_midpoint)));
        bool clicked = r_click.bernoulli(pc);
        if (cfg.click_noise > 0.0 && r_click.bernoulli(cfg.click_noise)) clicked = !clicked;
        if (clicked) page.clicks.push_back(id);
      }
      if (first_click_page == 0 && !page.clicks.empty()) first_click_page = g + 1;
    }
    if (first_click_page == 0 || first_click_page >= cfg.pages_per_session) continue;

    const bool forced_late = r_buy.bernoulli(cfg.late_purchase_fraction);
    const int pool_first_page = forced_late ? first_click_page + 1 : 1;
    std::vector<int> pool;  // product indices
    for (int g = pool_first_page - 1; g < cfg.pages_per_session; ++g) {
      for (ItemId id : pages[g].items) pool.push_back(static_cast<int>(id - 1));
    }
    if (pool.empty()) continue;

    int n_buy = 1 + (r_buy.bernoulli(cfg.two_purchase_prob) ? 1 : 0);
    n_buy = std::min<int>(n_buy, static_cast<int>(pool.size()));
    std::vector<double> buy_logits(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
      buy_logits[i] = dot(pref, world.product_vecs[pool[i]]) / cfg.purchase_temperature +
                      cfg.purchase_pop_weight * log_pop[pool[i]];
    }
    std::vector<ItemId> bought;
    for (int b = 0; b < n_buy; ++b) {
      const std::size_t pick = r_buy.sample_softmax(buy_logits, 1.0, scratch);
      bought.push_back(pool[pick] + 1);
      buy_logits.erase(buy_logits.begin() + static_cast<std::ptrdiff_t>(pick));
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    }

    for (ItemId id : bought) {
      for (Page& page : pages) {
        if (std::find(page.items.begin(), page.items.end(), id) != page.items.end()) {
          page.purchases.push_back(id);
          page.clicks.push_back(id);  // a purchase implies a click
          break;
        }
      }
    }
    for (Page& page : pages) {
      detail::sort_unique(page.clicks);
      detail::sort_unique(page.purchases);
    }

    QuerySession s;
    s.session_id = static_cast<std::int64_t>(sessions.size()) + 1;
    if (!anonymous) s.user_id = static_cast<UserId>(user_idx + 1);
    s.query = std::move(query);
    s.week = week;
    s.pages = std::move(pages);
    validate_session(s);
    if (!session_passes_filter(s)) continue;

    for (const Page& page : s.pages) {
      total_clicks += page.clicks.size();
      total_purchases += page.purchases.size();
    }
    total_pages += s.pages.size();
    if (anonymous) ++n_anonymous;
    world.session_prefs.push_back(pref);
    sessions.push_back(std::move(s));
  }

  if (stats != nullptr) {
    stats->attempts = attempt;
    stats->emitted = sessions.size();
    stats->mean_clicks_per_page =
        total_pages ? static_cast<double>(total_clicks) / static_cast<double>(total_pages) : 0.0;
    stats->mean_purchases_per_session =
        sessions.empty() ? 0.0 : static_cast<double>(total_purchases) / sessions.size();
    stats->anonymous_fraction =
        sessions.empty() ? 0.0 : static_cast<double>(n_anonymous) / sessions.size();
  }
  return sessions;
}

}  // namespace ctxrank
