#include "mus/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mus {

namespace {

// Standard normal third quartile.
constexpr double kZ75 = 0.6744897501960817;

void check_quartiles(const Quartiles& q, const char* name, bool positive_support) {
  if (!(q.q1 <= q.median && q.median <= q.q3)) {
    throw std::invalid_argument(std::string("ClinicalDistributions: ") + name + " quartiles out of order");
  }
  if (positive_support && !(q.q1 > 0.0)) {
    throw std::invalid_argument(std::string("ClinicalDistributions: ") + name + " quartiles must be positive");
  }
}

void check_class(const ClassDistribution& c) {
  check_quartiles(c.age, "age", false);
  check_quartiles(c.psa, "psa", true);
  check_quartiles(c.volume, "volume", true);
  if (!(c.dre_rate >= 0.0 && c.dre_rate <= 1.0)) throw std::invalid_argument("ClinicalDistributions: dre rate outside [0,1]");
}

// Two-piece normal: separate spreads below and above the median put the
// median and both quartiles exactly on their targets.
double split_normal(const Quartiles& q, double z) {
  const double spread = z < 0.0 ? q.median - q.q1 : q.q3 - q.median;
  return q.median + z * spread / kZ75;
}

// Same construction on the log scale.
double split_lognormal(const Quartiles& q, double z) {
  const double spread = z < 0.0 ? std::log(q.median / q.q1) : std::log(q.q3 / q.median);
  return q.median * std::exp(z * spread / kZ75);
}

std::vector<bool> class_assignment(const PhantomConfig& config) {
  std::vector<bool> positive(static_cast<std::size_t>(config.n_positive + config.n_negative), false);
  std::fill(positive.begin(), positive.begin() + config.n_positive, true);
  Rng rng(derive_seed(config.seed, "class-assignment"));
  rng.shuffle(positive.begin(), positive.end());
  return positive;
}

struct GlandGeometry {
  double cx, cy;     // centre, pixels
  double ax, ay;     // semi-axes at mid-sweep, pixels
  double brightness;
};

struct LesionGeometry {
  double u, v;       // centre in gland-normalized coordinates
  double radius;     // pixels
  double angle;      // texture orientation
  double period;     // texture wavelength, pixels
};

std::vector<std::uint8_t> render_slice(const PhantomConfig& config, const GlandGeometry& gland, int frame,
                                       int n_frames, const LesionGeometry* lesion, double lesion_scale, Rng& rng) {
  const int size = config.image_size;
  const double s = static_cast<double>(size);
  const double sweep = 0.65 + 0.35 * std::sin(std::numbers::pi * (frame + 0.5) / n_frames);
  const double ax = gland.ax * sweep, ay = gland.ay * sweep;
  double lx = 0.0, ly = 0.0, lr = 0.0, kx = 0.0, ky = 0.0;
  if (lesion) {
    lx = gland.cx + lesion->u * ax;
    ly = gland.cy + lesion->v * ay;
    lr = lesion->radius * lesion_scale;
    kx = std::cos(lesion->angle) * 2.0 * std::numbers::pi / lesion->period;
    ky = std::sin(lesion->angle) * 2.0 * std::numbers::pi / lesion->period;
  }
  std::vector<std::uint8_t> codes(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    const double depth = y / s;
    for (int x = 0; x < size; ++x) {
      const double dx = (x + 0.5 - gland.cx) / ax, dy = (y + 0.5 - gland.cy) / ay;
      const double r2 = dx * dx + dy * dy;
      const double inside = 1.0 / (1.0 + std::exp((std::sqrt(r2) - 1.0) * 12.0));
      const double tissue = gland.brightness * (1.0 - 0.35 * std::min(r2, 1.0)) + 0.05 * depth;
      const double outside = 0.12 + 0.08 * depth;
      const double base = inside * tissue + (1.0 - inside) * outside;
      double value = base * (1.0 + config.speckle_noise * rng.normal());
      if (lesion && config.lesion_contrast > 0.0) {
        const double ex = x + 0.5 - lx, ey = y + 0.5 - ly;
        const double d = std::sqrt(ex * ex + ey * ey) / lr;
        if (d < 1.5) {
          const double edge = 1.0 / (1.0 + std::exp((d - 1.0) * 8.0));
          const double texture = 0.7 + 0.3 * std::cos(kx * (x + 0.5) + ky * (y + 0.5));
          value += config.lesion_contrast * edge * texture;
        }
      }
      codes[static_cast<std::size_t>(y) * size + x] =
          static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
    }
  }
  return codes;
}

}  // namespace

void ClinicalDistributions::validate() const {
  check_class(positive);
  check_class(negative);
}

void PhantomConfig::validate() const {
  if (n_positive < 1 || n_negative < 1) throw std::invalid_argument("PhantomConfig: class counts must be >= 1");
  if (image_size < 8) throw std::invalid_argument("PhantomConfig: image_size must be >= 8");
  if (min_run_length < 1) throw std::invalid_argument("PhantomConfig: min_run_length must be >= 1");
  if (extra_run_mean < 0.0 || extra_run_mean > 50.0) throw std::invalid_argument("PhantomConfig: extra_run_mean out of range");
  if (exclusion_margin < 0) throw std::invalid_argument("PhantomConfig: exclusion_margin must be >= 0");
  if (min_slices > max_slices) throw std::invalid_argument("PhantomConfig: min_slices > max_slices");
  // Room for the longest plausible run plus margins.
  if (min_slices < min_run_length + 2 * exclusion_margin + 30) {
    throw std::invalid_argument("PhantomConfig: min_slices too small for lesion runs and margins");
  }
  if (!(lesion_contrast >= 0.0 && lesion_contrast < 1.0)) throw std::invalid_argument("PhantomConfig: lesion_contrast outside [0,1)");
  if (!(lesion_radius > 0.0 && lesion_radius < 0.5)) throw std::invalid_argument("PhantomConfig: lesion_radius outside (0,0.5)");
  if (!(speckle_noise >= 0.0 && speckle_noise < 1.0)) throw std::invalid_argument("PhantomConfig: speckle_noise outside [0,1)");
}

std::string synthetic_patient_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "P%03d", index + 1);
  return buf;
}

PatientRecord sample_clinical(bool positive, const ClinicalDistributions& dists, Rng& rng) {
  const auto& c = positive ? dists.positive : dists.negative;
  PatientRecord r;
  r.cspca = positive;
  const double age = split_normal(c.age, rng.normal());
  r.age = static_cast<int>(std::clamp(std::lround(age), 45L, 90L));
  r.psa = split_lognormal(c.psa, rng.normal());
  r.prostate_volume = split_lognormal(c.volume, rng.normal());
  r.dre = rng.bernoulli(c.dre_rate) ? 1 : 0;
  return r;
}

std::pair<Study, LesionTruth> generate_study(const PhantomConfig& config, const ClinicalDistributions& dists,
                                             int index) {
  config.validate();
  dists.validate();
  const auto classes = class_assignment(config);
  if (index < 0 || index >= static_cast<int>(classes.size())) throw std::out_of_range("generate_study: index");
  const bool positive = classes[static_cast<std::size_t>(index)];
  const std::uint64_t study_seed = derive_seed(derive_seed(config.seed, "study"), static_cast<std::uint64_t>(index));

  Study study;
  Rng clinical_rng(derive_seed(study_seed, "clinical"));
  study.record = sample_clinical(positive, dists, clinical_rng);
  study.record.patient_id = synthetic_patient_id(index);

  Rng rng(derive_seed(study_seed, "geometry"));
  const int n = static_cast<int>(rng.integer(config.min_slices, config.max_slices));
  const double s = config.image_size;
  GlandGeometry gland{s * (0.5 + 0.03 * rng.normal()), s * (0.55 + 0.03 * rng.normal()),
                      s * 0.33 * rng.uniform(0.9, 1.1), s * 0.26 * rng.uniform(0.9, 1.1), rng.uniform(0.4, 0.5)};

  LesionTruth truth;
  LesionGeometry lesion{};
  if (positive) {
    const int length = config.min_run_length + rng.poisson(config.extra_run_mean);
    const int m = config.exclusion_margin;
    const int last_start = std::max(m, n - length - m);
    truth.has_lesion = true;
    truth.first_frame = static_cast<int>(rng.integer(m, last_start));
    truth.last_frame = std::min(n - 1, truth.first_frame + length - 1);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double radius = 0.45 * std::sqrt(rng.uniform());
    lesion = {radius * std::cos(angle), radius * std::sin(angle), config.lesion_radius * s,
              rng.uniform(0.0, std::numbers::pi), std::max(3.0, s / 16.0)};
  }

  study.labels.assign(static_cast<std::size_t>(n), SliceLabel::negative);
  if (truth.has_lesion) {
    for (int f = truth.first_frame - config.exclusion_margin; f <= truth.last_frame + config.exclusion_margin; ++f) {
      if (f < 0 || f >= n) continue;
      const bool in_run = f >= truth.first_frame && f <= truth.last_frame;
      study.labels[static_cast<std::size_t>(f)] = in_run ? SliceLabel::positive : SliceLabel::excluded;
    }
  }

  study.slices.reserve(static_cast<std::size_t>(n));
  for (int f = 0; f < n; ++f) {
    Rng pixel_rng(derive_seed(study_seed, static_cast<std::uint64_t>(f)));
    const bool in_run = truth.has_lesion && f >= truth.first_frame && f <= truth.last_frame;
    double scale = 1.0;
    if (in_run && truth.length() > 1) {
      const double t = 2.0 * (f - truth.first_frame) / (truth.length() - 1) - 1.0;  // -1..1 across the run
      scale = 0.8 + 0.2 * std::sqrt(std::max(0.0, 1.0 - t * t));
    }
    auto codes = render_slice(config, gland, f, n, in_run ? &lesion : nullptr, scale, pixel_rng);
    study.slices.push_back(SliceImage{study.record.patient_id, f, config.image_size, config.image_size, std::move(codes)});
  }
  return {std::move(study), truth};
}

SyntheticCohort generate_cohort(const PhantomConfig& config, const ClinicalDistributions& dists) {
  SyntheticCohort out;
  const int total = config.n_positive + config.n_negative;
  out.cohort.studies.reserve(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    auto [study, truth] = generate_study(config, dists, i);
    out.truth[study.record.patient_id] = truth;
    out.cohort.studies.push_back(std::move(study));
  }
  return out;
}

LesionTruth lesion_oracle(const SyntheticCohort& synthetic, const Study& study) {
  auto it = synthetic.truth.find(study.record.patient_id);
  if (it == synthetic.truth.end()) {
    throw std::invalid_argument("lesion_oracle: study " + study.record.patient_id + " is not synthetic");
  }
  const auto& t = it->second;
  if (t.has_lesion != study.record.cspca || (t.has_lesion && t.last_frame >= static_cast<int>(study.slices.size()))) {
    throw std::invalid_argument("lesion_oracle: study " + study.record.patient_id + " does not match the planted truth");
  }
  return t;
}

void write_truth_csv(const SyntheticCohort& synthetic, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "patient_id,cspca,lesion_first_frame,lesion_last_frame\n";
  for (const auto& [id, t] : synthetic.truth) {
    os << id << ',' << (t.has_lesion ? 1 : 0) << ',';
    if (t.has_lesion) os << t.first_frame << ',' << t.last_frame;
    else os << ',';
    os << '\n';
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << os.str();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace mus
