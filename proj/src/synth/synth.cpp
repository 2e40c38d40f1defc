#include "mmv/synth/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <numbers>

#include "mmv/dataset/io.hpp"
#include "mmv/diffcore/tensor.hpp"

namespace mmv::synth {

namespace {

constexpr std::array<double, 5> kTransferProbs = {0.45, 0.35, 0.12, 0.05, 0.03};

// Intensities on [0,1] before noise.
constexpr double kBackground = 0.15;
constexpr double kZona = 0.70;
constexpr double kFluid = 0.30;
constexpr double kMembrane = 0.08;
constexpr double kPronucleus = 0.18;
constexpr double kFragment = 0.88;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  return splitmix(splitmix(splitmix(seed) ^ index) ^ (stream * 0x632BE59BD9B4E019ull));
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::string padded(std::size_t value, std::size_t width) {
  std::string s = std::to_string(value);
  if (s.size() < width) s.insert(0, width - s.size(), '0');
  return s;
}

struct Cell {
  double row, col, radius;
};

// Ring layout for n cells: centres on a circle of radius rho with at least
// 1.5 px between neighbouring discs so instance masks stay disconnected.
std::vector<Cell> layout_cells(std::size_t n, const Geometry& g, double orientation,
                               const std::vector<double>& draws, double asymmetry) {
  std::vector<Cell> cells;
  if (n == 1) {
    cells.push_back({g.center, g.center, 0.8 * g.inner_radius});
    return cells;
  }
  const double s = std::sin(std::numbers::pi / static_cast<double>(n));
  const double rho = (g.inner_radius + 0.25) / (1.0 + s);
  const double r_max = 0.92 * std::min(rho * s - 0.75, g.inner_radius - 0.5 - rho);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = orientation + 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    const double r = r_max * (1.0 - asymmetry * draws[i]);
    cells.push_back({g.center + rho * std::sin(a), g.center + rho * std::cos(a), r});
  }
  return cells;
}

std::size_t events_before(const std::vector<std::size_t>& events, std::size_t t) {
  return static_cast<std::size_t>(std::count_if(events.begin(), events.end(), [&](std::size_t e) { return e <= t; }));
}

std::uint8_t quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

data::EhrVector draw_ehr(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> age(24.0, 44.0);
  std::normal_distribution<double> log_amh(std::log(2.0), 0.6);
  std::normal_distribution<double> bmi(24.0, 4.0);
  std::poisson_distribution<int> oocytes(10.0);
  std::uniform_int_distribution<int> prior(0, 4);
  std::discrete_distribution<int> protocol({0.45, 0.45, 0.10});
  std::bernoulli_distribution icsi(0.6);

  data::EhrVector e;
  const double a = std::round(age(rng) * 10.0) / 10.0;
  const double amh = std::round(std::exp(log_amh(rng)) * 100.0) / 100.0;
  const double b = std::round(std::clamp(bmi(rng), 16.0, 45.0) * 10.0) / 10.0;
  e.numeric = {a, amh, b, static_cast<double>(oocytes(rng)), static_cast<double>(prior(rng))};
  static const std::array<const char*, 3> kProtocols = {"agonist", "antagonist", "natural"};
  e.categorical = {kProtocols[static_cast<std::size_t>(protocol(rng))], icsi(rng) ? "icsi" : "ivf"};
  return e;
}

double treatment_factor(const data::EhrVector& e) {
  const double age = e.numeric[0], amh = e.numeric[1], bmi = e.numeric[2];
  const double oocytes = e.numeric[3], prior = e.numeric[4];
  double x = -0.16 * (age - 34.0) + 0.6 * std::log(amh / 2.0) - 0.05 * (bmi - 24.0) + 0.08 * (oocytes - 10.0) -
             0.25 * (prior - 2.0);
  if (e.categorical[0] == "natural") x -= 0.4;
  if (e.categorical[0] == "agonist") x += 0.2;
  return logistic(x);
}

SynthLatent draw_latent(const SynthConfig& c, double u, double shared_quality, double shared_appearance,
                        std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  SynthLatent z;
  z.treatment_factor = u;
  const double r = c.sibling_correlation;
  z.quality = r * shared_quality + (1.0 - r) * unit(rng);
  z.appearance = r * shared_appearance + (1.0 - r) * unit(rng);
  const double q = z.quality;
  const double T = static_cast<double>(c.frames);
  const double irregular = 0.5 * (1.0 - q);

  double t = T * (0.12 + 0.28 * (1.0 - q)) * (1.0 + 0.3 * irregular * (2.0 * unit(rng) - 1.0));
  std::size_t last = 0;
  for (std::size_t k = 0; k < kMaxDivisions; ++k) {
    std::size_t frame = static_cast<std::size_t>(std::lround(t));
    if (k > 0) frame = std::max(frame, last + 1);
    if (frame == 0) frame = 1;
    if (frame >= c.frames) break;
    z.events.push_back(frame);
    last = frame;
    t = static_cast<double>(frame) + T * (0.18 + 0.12 * (1.0 - q)) * (1.0 + irregular * (2.0 * unit(rng) - 1.0));
  }

  z.frag = std::clamp(0.02 + 0.30 * (1.0 - q) * (1.0 - q) + 0.02 * nd(rng), 0.0, 0.6);
  z.asymmetry = 0.25 * (1.0 - q);
  z.radius_draws.resize(kMaxDivisions + 1);
  for (std::size_t s = 0; s <= kMaxDivisions; ++s) {
    const std::size_t n = std::size_t{1} << s;
    for (std::size_t i = 0; i < n; ++i) z.radius_draws[s].push_back(n == 1 ? 0.0 : unit(rng));
  }
  z.orientation = 2.0 * std::numbers::pi * unit(rng);
  z.render_seed = rng();
  return z;
}

double planted_score(const SynthLatent& z, const SynthConfig& c) {
  const double total = c.w_video + c.w_ehr + c.w_morph;
  return (c.w_video * (2.0 * z.appearance - 1.0) + c.w_ehr * (2.0 * z.treatment_factor - 1.0) +
          c.w_morph * (2.0 * z.quality - 1.0)) /
         total;
}

struct Draft {
  data::TreatmentCycle cycle;
  std::vector<SynthLatent> latents;
  std::vector<std::size_t> transferred;  // embryo indices
};

Draft draft_treatment(const SynthConfig& c, std::size_t index, std::size_t id_width) {
  std::mt19937_64 rng(stream_seed(c.seed, index, 0));
  Draft d;
  d.cycle.treatment_id = "T" + padded(index + 1, id_width);
  d.cycle.ehr = draw_ehr(rng);
  const double u = treatment_factor(d.cycle.ehr);

  std::uniform_int_distribution<std::size_t> count(c.min_embryos, c.max_embryos);
  const std::size_t n = count(rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double shared_quality = unit(rng);
  const double shared_appearance = unit(rng);
  for (std::size_t i = 0; i < n; ++i) d.latents.push_back(draw_latent(c, u, shared_quality, shared_appearance, rng));

  std::discrete_distribution<std::size_t> k_dist(kTransferProbs.begin(), kTransferProbs.end());
  const std::size_t k = std::min(n, k_dist(rng) + 1);
  // The embryologist ranks on a noisy view of morphokinetic quality.
  std::normal_distribution<double> noise(0.0, c.selection_noise);
  std::vector<std::pair<double, std::size_t>> proxy;
  for (std::size_t i = 0; i < n; ++i) proxy.push_back({d.latents[i].quality + noise(rng), i});
  std::sort(proxy.begin(), proxy.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; i < k; ++i) d.transferred.push_back(proxy[i].second);
  std::sort(d.transferred.begin(), d.transferred.end());
  return d;
}

// Offset b such that the mean over treatments of P(at least one birth)
// matches the target rate. That mean is increasing in b.
double calibrate_offset(const std::vector<Draft>& drafts, const SynthConfig& c) {
  auto rate = [&](double b) {
    double total = 0.0;
    for (const auto& d : drafts) {
      double none = 1.0;
      for (std::size_t i : d.transferred) none *= 1.0 - birth_probability(d.latents[i], c, b);
      total += 1.0 - none;
    }
    return total / static_cast<double>(drafts.size());
  };
  double lo = -60.0, hi = 60.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (rate(mid) < c.success_rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

template <typename F>
void parallel_for(std::size_t n, F&& body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

void SynthConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("synth: " + what);
  };
  need(n_treatments >= 1, "n_treatments must be positive");
  need(min_embryos >= 1 && max_embryos >= min_embryos, "need 1 <= min_embryos <= max_embryos");
  need(max_embryos <= 99, "max_embryos must be at most 99");
  need(frames >= 8 && frames <= 0xFFFF, "frames must be in [8, 65535]");
  need(frame_size >= 16 && frame_size <= 0xFFFF, "frame_size must be at least 16");
  need(success_rate > 0.0 && success_rate < 1.0, "success_rate must be in (0,1)");
  need(w_video >= 0.0 && w_ehr >= 0.0 && w_morph >= 0.0, "signal weights must be non-negative");
  need(w_video + w_ehr + w_morph > 0.0, "signal weights must not all be zero");
  need(signal_strength >= 0.0 && std::isfinite(signal_strength), "signal_strength must be finite and >= 0");
  need(pixel_noise >= 0.0 && interp_noise >= 0.0 && selection_noise >= 0.0, "noise levels must be >= 0");
  need(zona_width >= 1, "zona_width must be at least 1");
  need(sibling_correlation >= 0.0 && sibling_correlation < 1.0, "sibling_correlation must be in [0,1)");
  need(stage_classes >= kMaxDivisions + 2, "stage_classes must be at least 5");
  geometry(*this);
}

Geometry geometry(const SynthConfig& c) {
  Geometry g;
  const double h = static_cast<double>(c.frame_size);
  g.center = (h - 1.0) / 2.0;
  g.outer_radius = 0.45 * h;
  g.inner_radius = g.outer_radius - static_cast<double>(c.zona_width);
  // Eight cells of radius >= 1 need roughly this much room inside the zona.
  if (g.inner_radius < 6.0)
    throw ConfigError("synth: zona_width " + std::to_string(c.zona_width) + " leaves no room for blastomeres in a " +
                      std::to_string(c.frame_size) + " px frame");
  return g;
}

const std::vector<std::string>& interp_schema() {
  static const std::vector<std::string> names = {"t2_min", "t4_min", "t8_min", "symmetry", "zona_thickness_px",
                                                 "frag_mean"};
  return names;
}

data::EhrSchema ehr_schema() {
  return {{"age", "amh", "bmi", "n_oocytes", "prior_cycles"},
          {{"protocol", {"agonist", "antagonist", "natural"}}, {"insemination", {"ivf", "icsi"}}}};
}

double birth_probability(const SynthLatent& latent, const SynthConfig& config, double logit_offset) {
  return logistic(config.signal_strength * planted_score(latent, config) + logit_offset);
}

RenderedEmbryo render_embryo_video(const SynthLatent& z, const SynthConfig& c) {
  const Geometry g = geometry(c);
  const std::size_t T = c.frames, H = c.frame_size, P = H * H;
  std::mt19937_64 rng(z.render_seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  RenderedEmbryo out;
  out.video = {T, H, H, 1, std::vector<std::uint8_t>(T * P)};
  data::MorphFeatures& m = out.morph;
  m.frames = T;
  m.height = m.width = H;
  m.zona_classes = kZonaClasses;
  m.stage_classes = c.stage_classes;
  m.zona.resize(T * P);
  m.blast.assign(T * P, 0);
  m.pronuc.assign(T * P, 0);
  out.radii.resize(T);

  // Static zona classes.
  std::vector<std::uint8_t> zona(P);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t col = 0; col < H; ++col) {
      const double d = std::hypot(static_cast<double>(r) - g.center, static_cast<double>(col) - g.center);
      zona[r * H + col] = d > g.outer_radius ? 0 : (d > g.inner_radius ? 1 : 2);
    }

  const double cytoplasm = 0.40 + 0.35 * z.appearance;
  std::vector<double> img(P);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t stage = events_before(z.events, t);
    const std::size_t n = std::size_t{1} << stage;
    const auto cells = layout_cells(n, g, z.orientation, z.radius_draws[stage], z.asymmetry);
    if (n > 1)
      for (const auto& cell : cells) out.radii[t].push_back(cell.radius);

    const double frag_t = std::clamp(z.frag + 0.01 * nd(rng), 0.0, 1.0);
    m.frag.push_back(static_cast<float>(frag_t));
    m.stage.push_back(static_cast<std::uint8_t>(1 + stage));

    std::uint8_t* blast = m.blast.data() + t * P;
    std::uint8_t* pronuc = m.pronuc.data() + t * P;
    std::copy(zona.begin(), zona.end(), m.zona.begin() + static_cast<std::ptrdiff_t>(t * P));

    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t col = 0; col < H; ++col) {
        const std::size_t p = r * H + col;
        const double y = static_cast<double>(r), x = static_cast<double>(col);
        for (std::size_t i = 0; i < cells.size(); ++i) {
          const double dy = y - cells[i].row, dx = x - cells[i].col;
          if (dy * dy + dx * dx <= cells[i].radius * cells[i].radius) {
            blast[p] = static_cast<std::uint8_t>(i + 1);
            break;
          }
        }
        if (stage == 0) {
          const double off = 0.28 * cells[0].radius, pr = std::max(1.0, 0.2 * cells[0].radius);
          for (int k = 0; k < 2; ++k) {
            const double a = z.orientation + std::numbers::pi * k;
            const double dy = y - (g.center + off * std::sin(a)), dx = x - (g.center + off * std::cos(a));
            if (dy * dy + dx * dx <= pr * pr) pronuc[p] = static_cast<std::uint8_t>(k + 1);
          }
        }
      }

    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t col = 0; col < H; ++col) {
        const std::size_t p = r * H + col;
        double v;
        if (blast[p]) {
          const bool edge = (r == 0 || blast[p - H] != blast[p]) || (r + 1 == H || blast[p + H] != blast[p]) ||
                            (col == 0 || blast[p - 1] != blast[p]) || (col + 1 == H || blast[p + 1] != blast[p]);
          v = edge ? kMembrane : cytoplasm;
          if (pronuc[p]) v = kPronucleus;
        } else if (zona[p] == 2) {
          v = unit(rng) < 0.6 * frag_t ? kFragment : kFluid;
        } else {
          v = zona[p] == 1 ? kZona : kBackground;
        }
        img[p] = v + c.pixel_noise * nd(rng);
      }
    std::uint8_t* frame = out.video.pixels.data() + t * P;
    for (std::size_t p = 0; p < P; ++p) frame[p] = quantize(img[p]);
  }
  return out;
}

double measure_zona_thickness(const std::uint8_t* plane, std::size_t side) {
  std::size_t ring = 0, inner = 0;
  for (std::size_t p = 0; p < side * side; ++p) {
    ring += plane[p] == 1;
    inner += plane[p] == 2;
  }
  const double r_in = std::sqrt(static_cast<double>(inner) / std::numbers::pi);
  const double r_out = std::sqrt(static_cast<double>(inner + ring) / std::numbers::pi);
  return r_out - r_in;
}

double symmetry_index(const std::vector<std::vector<double>>& radii) {
  if (radii.empty()) return 1.0;
  double total = 0.0;
  for (const auto& frame : radii) {
    if (frame.size() < 2) {
      total += 1.0;
      continue;
    }
    const auto [lo, hi] = std::minmax_element(frame.begin(), frame.end());
    total += *lo / *hi;
  }
  return total / static_cast<double>(radii.size());
}

std::vector<double> derive_interpretable(const SynthLatent& z, const RenderedEmbryo& rendered,
                                         const SynthConfig& c, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  const double window = kMinutesPerFrame * static_cast<double>(c.frames);
  std::vector<double> f;
  for (std::size_t k = 0; k < kMaxDivisions; ++k) {
    const double exact = k < z.events.size() ? kMinutesPerFrame * static_cast<double>(z.events[k]) : window;
    f.push_back(exact);
  }
  f.push_back(symmetry_index(rendered.radii));
  f.push_back(measure_zona_thickness(rendered.morph.zona.data(), rendered.morph.width));
  double frag = 0.0;
  for (float v : rendered.morph.frag) frag += v;
  f.push_back(frag / static_cast<double>(rendered.morph.frag.size()));

  const std::array<double, 6> scale = {window, window, window, 1.0, static_cast<double>(c.zona_width), 1.0};
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double noise = nd(rng);  // drawn even at zero noise so streams stay aligned
    f[i] += c.interp_noise * scale[i] * noise;
  }
  return f;
}

GeneratedCorpus generate_corpus(const SynthConfig& c) {
  c.validate();
  const std::size_t id_width = std::max<std::size_t>(4, std::to_string(c.n_treatments).size());

  std::vector<Draft> drafts(c.n_treatments);
  parallel_for(c.n_treatments, [&](std::size_t i) { drafts[i] = draft_treatment(c, i, id_width); });

  GeneratedCorpus corpus;
  corpus.logit_offset = calibrate_offset(drafts, c);
  corpus.dataset.ehr_schema = ehr_schema();
  corpus.dataset.interp_schema = interp_schema();
  corpus.dataset.cycles.resize(c.n_treatments);
  corpus.latents.resize(c.n_treatments);

  parallel_for(c.n_treatments, [&](std::size_t i) {
    Draft& d = drafts[i];
    std::mt19937_64 rng(stream_seed(c.seed, i, 1));
    data::TreatmentCycle& cycle = d.cycle;
    cycle.n_transferred = static_cast<int>(d.transferred.size());
    for (std::size_t e : d.transferred) {
      std::bernoulli_distribution birth(birth_probability(d.latents[e], c, corpus.logit_offset));
      cycle.n_births += birth(rng) ? 1 : 0;
    }
    for (std::size_t e = 0; e < d.latents.size(); ++e) {
      RenderedEmbryo r = render_embryo_video(d.latents[e], c);
      data::EmbryoSample s;
      s.embryo_id = cycle.treatment_id + "_E" + padded(e + 1, 2);
      s.interp = derive_interpretable(d.latents[e], r, c, rng);
      s.video = std::move(r.video);
      s.morph = std::move(r.morph);
      s.transferred = std::binary_search(d.transferred.begin(), d.transferred.end(), e);
      cycle.embryos.push_back(std::move(s));
    }
    data::assign_labels(cycle);
    corpus.dataset.cycles[i] = std::move(cycle);
    corpus.latents[i] = std::move(d.latents);
  });
  data::validate(corpus.dataset);
  return corpus;
}

GeneratedCorpus generate_dataset(const SynthConfig& config, const std::filesystem::path& root) {
  GeneratedCorpus corpus = generate_corpus(config);
  data::write_dataset(root, corpus.dataset);
  return corpus;
}

}  // namespace mmv::synth
