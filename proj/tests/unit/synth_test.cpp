#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <queue>

#include "mmv/dataset/io.hpp"
#include "mmv/diffcore/tensor.hpp"
#include "mmv/synth/synth.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace mmv;
using namespace mmv::synth;

namespace {

SynthConfig small_config(std::uint64_t seed = 7) {
  SynthConfig c;
  c.n_treatments = 20;
  c.frames = 24;
  c.frame_size = 24;
  c.zona_width = 2;
  c.seed = seed;
  return c;
}

// Connected components of nonzero pixels, 4-connectivity, ignoring ids.
std::size_t count_components(const std::uint8_t* plane, std::size_t side) {
  std::vector<char> seen(side * side, 0);
  std::size_t n = 0;
  for (std::size_t s = 0; s < side * side; ++s) {
    if (!plane[s] || seen[s]) continue;
    ++n;
    std::queue<std::size_t> q;
    q.push(s);
    seen[s] = 1;
    while (!q.empty()) {
      const std::size_t p = q.front();
      q.pop();
      const std::size_t r = p / side, c = p % side;
      const std::size_t nb[4] = {r > 0 ? p - side : p, r + 1 < side ? p + side : p, c > 0 ? p - 1 : p,
                                 c + 1 < side ? p + 1 : p};
      for (std::size_t x : nb)
        if (plane[x] && !seen[x]) {
          seen[x] = 1;
          q.push(x);
        }
    }
  }
  return n;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Pairwise AUC oracle with half credit for ties.
double pairwise_auc(const std::vector<double>& score, const std::vector<int>& y) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < score.size(); ++i)
    for (std::size_t j = 0; j < score.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        den += 1;
        num += score[i] > score[j] ? 1.0 : (score[i] == score[j] ? 0.5 : 0.0);
      }
  return num / den;
}

// Standardized gradient-descent logistic regression; returns test scores.
std::vector<double> logreg(const std::vector<std::vector<double>>& xtr, const std::vector<int>& ytr,
                           const std::vector<std::vector<double>>& xte) {
  const std::size_t d = xtr[0].size();
  std::vector<double> mu(d, 0), sd(d, 0);
  for (const auto& x : xtr)
    for (std::size_t k = 0; k < d; ++k) mu[k] += x[k] / static_cast<double>(xtr.size());
  for (const auto& x : xtr)
    for (std::size_t k = 0; k < d; ++k) sd[k] += (x[k] - mu[k]) * (x[k] - mu[k]) / static_cast<double>(xtr.size());
  for (auto& s : sd) s = std::sqrt(s) + 1e-9;
  auto z = [&](const std::vector<double>& x) {
    std::vector<double> o(d);
    for (std::size_t k = 0; k < d; ++k) o[k] = (x[k] - mu[k]) / sd[k];
    return o;
  };
  std::vector<double> w(d, 0);
  double b = 0;
  for (int it = 0; it < 300; ++it) {
    std::vector<double> gw(d, 0);
    double gb = 0;
    for (std::size_t i = 0; i < xtr.size(); ++i) {
      const auto x = z(xtr[i]);
      double s = b;
      for (std::size_t k = 0; k < d; ++k) s += w[k] * x[k];
      const double r = 1.0 / (1.0 + std::exp(-s)) - ytr[i];
      for (std::size_t k = 0; k < d; ++k) gw[k] += r * x[k];
      gb += r;
    }
    for (std::size_t k = 0; k < d; ++k) w[k] -= 0.5 * gw[k] / static_cast<double>(xtr.size());
    b -= 0.5 * gb / static_cast<double>(xtr.size());
  }
  std::vector<double> out;
  for (const auto& x0 : xte) {
    const auto x = z(x0);
    double s = b;
    for (std::size_t k = 0; k < d; ++k) s += w[k] * x[k];
    out.push_back(s);
  }
  return out;
}

enum class View { kInterp, kEhr, kVideo };

std::vector<double> view_features(const data::TreatmentCycle& c, const data::EmbryoSample& e, View v) {
  if (v == View::kInterp) return *e.interp;
  if (v == View::kEhr) {
    std::vector<double> x = c.ehr.numeric;
    x.push_back(c.ehr.categorical[0] == "natural");
    x.push_back(c.ehr.categorical[0] == "agonist");
    return x;
  }
  // Crude video summaries: mean and spread of intensity, bright fraction.
  double s = 0, s2 = 0, bright = 0;
  for (auto p : e.video.pixels) {
    s += p;
    s2 += double(p) * p;
    bright += p > 150;
  }
  const double n = static_cast<double>(e.video.pixels.size());
  return {s / n, s2 / n - (s / n) * (s / n), bright / n};
}

// Held-out AUC on transferred embryos (positive = label > 0), split by treatment parity.
double held_out_auc(const data::Dataset& ds, View v) {
  std::vector<std::vector<double>> xtr, xte;
  std::vector<int> ytr, yte;
  for (std::size_t i = 0; i < ds.cycles.size(); ++i)
    for (const auto& e : ds.cycles[i].embryos) {
      if (!e.transferred) continue;
      auto& x = i % 2 == 0 ? xtr : xte;
      auto& y = i % 2 == 0 ? ytr : yte;
      x.push_back(view_features(ds.cycles[i], e, v));
      y.push_back(*e.label > 0 ? 1 : 0);
    }
  return pairwise_auc(logreg(xtr, ytr, xte), yte);
}

SynthConfig large_config(double wv, double we, double wm) {
  SynthConfig c;
  c.n_treatments = 4000;
  c.frames = 16;
  c.frame_size = 16;
  c.zona_width = 1;
  c.w_video = wv;
  c.w_ehr = we;
  c.w_morph = wm;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("generate_dataset is deterministic byte for byte") {
  const auto a = test::scratch_dir("synth_a");
  const auto b = test::scratch_dir("synth_b");
  generate_dataset(small_config(), a);
  generate_dataset(small_config(), b);
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(entry.path(), a);
    REQUIRE(fs::exists(b / rel));
    CHECK(slurp(entry.path()) == slurp(b / rel));
  }
  CHECK(files > 20);
}

TEST_CASE("generated directory loads and validates") {
  const auto dir = test::scratch_dir("synth_load");
  const auto corpus = generate_dataset(small_config(3), dir);
  const data::Dataset ds = data::load_dataset(dir);
  CHECK(ds.cycles.size() == 20);
  CHECK(ds == corpus.dataset);
  for (const auto& c : ds.cycles) {
    CHECK(c.n_births <= c.n_transferred);
    CHECK(c.n_transferred >= 1);
    CHECK(c.n_transferred <= 5);
  }
}

TEST_CASE("realized success rate tracks the target") {
  SynthConfig c = small_config(5);
  c.n_treatments = 1700;
  c.success_rate = 0.153;
  c.frames = 8;
  c.frame_size = 16;
  c.zona_width = 1;
  const auto corpus = generate_corpus(c);
  std::size_t wins = 0;
  for (const auto& t : corpus.dataset.cycles) {
    wins += t.success();
    CHECK(t.n_transferred <= 5);
  }
  const double rate = static_cast<double>(wins) / 1700.0;
  CHECK(std::abs(rate - 0.153) <= 0.03);
}

TEST_CASE("rendered masks follow the division schedule") {
  const SynthConfig c = small_config();
  const auto corpus = generate_corpus(c);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < corpus.latents.size(); ++i)
    for (std::size_t e = 0; e < corpus.latents[i].size(); ++e) {
      const SynthLatent& z = corpus.latents[i][e];
      REQUIRE(std::is_sorted(z.events.begin(), z.events.end()));
      REQUIRE(std::adjacent_find(z.events.begin(), z.events.end()) == z.events.end());
      CHECK(z.events.size() + 1 < c.stage_classes);
      const auto& m = *corpus.dataset.cycles[i].embryos[e].morph;
      for (std::size_t t = 0; t < m.frames; ++t) {
        const std::size_t events =
            static_cast<std::size_t>(std::count_if(z.events.begin(), z.events.end(), [&](auto f) { return f <= t; }));
        const std::uint8_t* blast = m.blast.data() + t * m.plane();
        const std::uint8_t* pronuc = m.pronuc.data() + t * m.plane();
        CHECK(count_components(blast, m.width) == (std::size_t{1} << events));
        const bool any_pronuc = std::any_of(pronuc, pronuc + m.plane(), [](auto p) { return p != 0; });
        CHECK(any_pronuc == (events == 0));
        if (t > 0) CHECK(m.stage[t] >= m.stage[t - 1]);
        CHECK(m.stage[t] == 1 + events);
        ++checked;
      }
    }
  CHECK(checked > 100);
}

TEST_CASE("interpretable features at zero noise") {
  SynthConfig c = small_config();
  c.interp_noise = 0.0;
  const auto corpus = generate_corpus(c);
  for (std::size_t i = 0; i < corpus.latents.size(); ++i)
    for (std::size_t e = 0; e < corpus.latents[i].size(); ++e) {
      const auto& z = corpus.latents[i][e];
      const auto& f = *corpus.dataset.cycles[i].embryos[e].interp;
      for (std::size_t k = 0; k < 3; ++k) {
        const double expected = k < z.events.size() ? 20.0 * static_cast<double>(z.events[k]) : 20.0 * c.frames;
        CHECK(f[k] == expected);
      }
      CHECK(std::abs(f[4] - static_cast<double>(c.zona_width)) <= 0.5);
      CHECK(f[3] > 0.0);
      CHECK(f[3] <= 1.0);
    }
}

TEST_CASE("zona thickness matches the configured width") {
  for (std::size_t side : {16u, 32u, 64u})
    for (std::size_t width : {1u, 2u, 3u}) {
      SynthConfig c = small_config();
      c.frame_size = side;
      c.zona_width = width;
      try {
        geometry(c);
      } catch (const ConfigError&) {
        continue;
      }
      SynthLatent z;
      z.radius_draws.assign(4, std::vector<double>(8, 0.0));
      const auto r = render_embryo_video(z, c);
      CHECK(std::abs(measure_zona_thickness(r.morph.zona.data(), side) - static_cast<double>(width)) <= 0.5);
      // Independent oracle: the zona run along the middle row from the left edge.
      const std::size_t row = side / 2;
      std::size_t run = 0;
      for (std::size_t col = 0; col < side / 2; ++col) run += r.morph.zona[row * side + col] == 1;
      CHECK(std::abs(static_cast<double>(run) - static_cast<double>(width)) <= 1.0);
    }
}

TEST_CASE("symmetry index") {
  CHECK(symmetry_index({{3.0, 3.0}, {2.0, 2.0, 2.0, 2.0}}) == 1.0);
  CHECK(symmetry_index({{1.0, 2.0}}) == 0.5);
  CHECK(symmetry_index({{}, {1.0, 2.0}}) == 0.75);
  SynthLatent z;
  z.events = {2, 4, 6};
  z.radius_draws = {{0.0}, {0.3, 0.9}, {0.1, 0.2, 0.3, 0.4}, std::vector<double>(8, 0.5)};
  z.asymmetry = 0.0;
  SynthConfig c = small_config();
  c.frames = 8;
  CHECK(symmetry_index(render_embryo_video(z, c).radii) == 1.0);
}

TEST_CASE("config validation") {
  SynthConfig c = small_config();
  c.frame_size = 12;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.frames = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.success_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.w_video = c.w_ehr = c.w_morph = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.zona_width = 10;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("planted signal is reachable where routed and absent elsewhere") {
  SUBCASE("morph signal reaches the interpretable features") {
    const auto ds = generate_corpus(large_config(0.0, 0.0, 1.0)).dataset;
    CHECK(held_out_auc(ds, View::kInterp) > 0.6);
    CHECK(std::abs(held_out_auc(ds, View::kEhr) - 0.5) <= 0.05);
  }
  SUBCASE("EHR-only signal leaves the video and features uninformative") {
    const auto ds = generate_corpus(large_config(0.0, 1.0, 0.0)).dataset;
    CHECK(held_out_auc(ds, View::kEhr) > 0.6);
    CHECK(std::abs(held_out_auc(ds, View::kVideo) - 0.5) <= 0.05);
    CHECK(std::abs(held_out_auc(ds, View::kInterp) - 0.5) <= 0.05);
  }
  SUBCASE("video-only signal is visible in raw intensities") {
    const auto ds = generate_corpus(large_config(1.0, 0.0, 0.0)).dataset;
    CHECK(held_out_auc(ds, View::kVideo) > 0.6);
    CHECK(std::abs(held_out_auc(ds, View::kEhr) - 0.5) <= 0.05);
  }
}

TEST_CASE("sibling correlation couples embryos of one treatment") {
  auto spread = [](double rho) {
    SynthConfig c = small_config(3);
    c.n_treatments = 400;
    c.frames = 8;
    c.frame_size = 16;
    c.zona_width = 1;
    c.sibling_correlation = rho;
    const auto g = generate_corpus(c);
    // Mean within-treatment variance of quality relative to the pooled variance.
    double within = 0.0, total = 0.0, mean = 0.0;
    std::size_t n = 0;
    for (const auto& t : g.latents)
      for (const auto& z : t) {
        mean += z.quality;
        ++n;
      }
    mean /= static_cast<double>(n);
    for (const auto& t : g.latents) {
      double m = 0.0;
      for (const auto& z : t) m += z.quality;
      m /= static_cast<double>(t.size());
      for (const auto& z : t) {
        within += (z.quality - m) * (z.quality - m);
        total += (z.quality - mean) * (z.quality - mean);
      }
    }
    return within / total;
  };
  const double independent = spread(0.0);
  const double coupled = spread(0.5);
  CHECK(independent > 0.7);
  CHECK(coupled < 0.5 * independent);
  SynthConfig bad = small_config();
  bad.sibling_correlation = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
