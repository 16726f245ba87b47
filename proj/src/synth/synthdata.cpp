#include "pairforge/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <json.hpp>

#include "lexicon.hpp"
#include "pairforge/rng.hpp"
#include "pairforge/serialize.hpp"

namespace pf::synth {

using json = nlohmann::json;

std::size_t class_index(ShapeKind shape, Intensity intensity) {
  return static_cast<std::size_t>(intensity) * kNumShapes + static_cast<std::size_t>(shape);
}

std::string shape_word(ShapeKind s) {
  return std::string(lexicon::kShape[static_cast<std::size_t>(s)].front());
}

std::string intensity_word(Intensity i) {
  return std::string(lexicon::kIntensity[static_cast<std::size_t>(i)].front());
}

std::string class_name(std::size_t class_id) {
  if (class_id >= kNumClasses) throw ContractError("class id out of range");
  return intensity_word(static_cast<Intensity>(class_id / kNumShapes)) + " " +
         shape_word(static_cast<ShapeKind>(class_id % kNumShapes));
}

SceneSpec generate_scene(std::uint64_t seed, int max_attrs) {
  if (max_attrs < 0 || max_attrs > 3) throw ContractError("generate_scene: max_attrs must be in [0, 3]");
  Rng rng(derive_seed(seed, 1));
  SceneSpec scene;
  scene.seed = seed;
  const auto count = rng.below(static_cast<std::uint64_t>(max_attrs) + 1);
  std::vector<Quadrant> quads{Quadrant::UpperLeft, Quadrant::UpperRight, Quadrant::LowerLeft,
                              Quadrant::LowerRight};
  rng.shuffle(quads);
  for (std::uint64_t i = 0; i < count; ++i) {
    scene.attributes.push_back({static_cast<ShapeKind>(rng.below(kNumShapes)),
                                static_cast<Intensity>(rng.below(kNumIntensities)), quads[i]});
  }
  return scene;
}

Labels labels_of(const SceneSpec& scene) {
  Labels l{};
  for (const auto& a : scene.attributes) l[class_index(a.shape, a.intensity)] = 1;
  return l;
}

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Fractional coverage in [0, 1] of pixel centre (x, y) by one attribute's shape.
struct ShapeGeometry {
  ShapeKind kind;
  double cx, cy, radius, angle;
  std::array<double, 6> blob{};  // three (dx, dy) lobes

  double coverage(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double d = std::hypot(dx, dy);
    switch (kind) {
      case ShapeKind::Disc:
        return clamp01(radius + 0.5 - d);
      case ShapeKind::Ring:
        return clamp01(2.0 - std::abs(d - radius));
      case ShapeKind::Bar: {
        const double u = dx * std::cos(angle) + dy * std::sin(angle);
        const double v = -dx * std::sin(angle) + dy * std::cos(angle);
        return clamp01(radius + 2.5 - std::abs(u)) * clamp01(2.5 - std::abs(v));
      }
      case ShapeKind::Wedge: {
        constexpr double half = 55.0 * std::numbers::pi / 180.0;
        double t = std::atan2(dy, dx) - angle;
        t = std::remainder(t, 2.0 * std::numbers::pi);
        return clamp01(radius + 0.5 - d) * clamp01((half - std::abs(t)) * std::max(d, 1.0) + 0.5);
      }
      case ShapeKind::Blob: {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) {
          const double ex = dx - blob[2 * k], ey = dy - blob[2 * k + 1];
          s += std::exp(-(ex * ex + ey * ey) / (2.0 * 3.2 * 3.2));
        }
        return clamp01(1.4 * s);
      }
    }
    return 0.0;
  }
};

}  // namespace

Tensor render_image(const SceneSpec& scene) {
  constexpr std::size_t S = kImageSize;
  std::vector<double> px(S * S);
  Rng noise(derive_seed(scene.seed, 2));
  for (auto& p : px) p = kBackgroundLevel + noise.uniform(-kBackgroundNoise, kBackgroundNoise);

  std::vector<std::pair<ShapeGeometry, double>> shapes;
  for (std::size_t i = 0; i < scene.attributes.size(); ++i) {
    const auto& a = scene.attributes[i];
    Rng rng(derive_seed(scene.seed, 3, i));
    const auto q = static_cast<std::size_t>(a.quadrant);
    const double qx = (q % 2 == 0) ? 16.0 : 48.0;
    const double qy = (q < 2) ? 16.0 : 48.0;
    ShapeGeometry g{a.shape, qx + rng.uniform(-4.0, 4.0), qy + rng.uniform(-4.0, 4.0),
                    rng.uniform(7.0, 10.0), rng.uniform(0.0, 2.0 * std::numbers::pi), {}};
    for (auto& b : g.blob) b = rng.uniform(-4.0, 4.0);
    const double amp = a.intensity == Intensity::Dense ? 0.8 : 0.35;
    shapes.emplace_back(g, amp);
  }
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      double add = 0.0;
      for (const auto& [g, amp] : shapes)
        add = std::max(add, amp * g.coverage(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5));
      px[y * S + x] = clamp01(px[y * S + x] + add);
    }
  return Tensor::from({1, S, S}, std::move(px));
}

namespace {

std::string pick(Rng& rng, const lexicon::Pool& pool) {
  return std::string(pool[rng.below(pool.size())]);
}

std::vector<std::string> fill(const std::vector<std::string_view>& tmpl, const Attribute& a,
                              Rng& rng, bool canonical) {
  const auto& ip = lexicon::kIntensity[static_cast<std::size_t>(a.intensity)];
  const auto& sp = lexicon::kShape[static_cast<std::size_t>(a.shape)];
  const auto q = static_cast<std::size_t>(a.quadrant);
  const auto& vp = lexicon::kVertical[q < 2 ? 0 : 1];
  const auto& hp = lexicon::kHorizontal[q % 2];
  auto choose = [&](const lexicon::Pool& p) { return canonical ? std::string(p.front()) : pick(rng, p); };
  std::vector<std::string> out;
  for (auto w : tmpl) {
    if (w == "I") out.push_back(choose(ip));
    else if (w == "S") out.push_back(choose(sp));
    else if (w == "V") out.push_back(choose(vp));
    else if (w == "H") out.push_back(choose(hp));
    else out.emplace_back(w);
  }
  return out;
}

}  // namespace

Report write_report(const SceneSpec& scene, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 4));
  constexpr std::size_t budget = kMaxLen - 1;

  std::vector<std::vector<std::string>> sentences;
  for (const auto& a : scene.attributes) {
    const auto& tmpl = lexicon::kFindingTemplates[rng.below(lexicon::kFindingTemplates.size())];
    sentences.push_back(fill(tmpl, a, rng, false));
  }
  if (scene.attributes.empty()) {
    sentences.emplace_back(lexicon::kFindingsEmpty.begin(), lexicon::kFindingsEmpty.end());
  }
  rng.shuffle(sentences);
  std::size_t used = 0;
  for (const auto& s : sentences) used += s.size();
  std::vector<std::size_t> filler_order(lexicon::kFillers.size());
  for (std::size_t i = 0; i < filler_order.size(); ++i) filler_order[i] = i;
  rng.shuffle(filler_order);
  std::size_t added = 0;
  for (auto fi : filler_order) {
    if (added == 2) break;
    const auto& f = lexicon::kFillers[fi];
    if (used + f.size() > budget) continue;
    const auto at = rng.below(sentences.size() + 1);
    sentences.insert(sentences.begin() + static_cast<std::ptrdiff_t>(at),
                     std::vector<std::string>(f.begin(), f.end()));
    used += f.size();
    ++added;
  }
  std::vector<std::string> findings;
  for (const auto& s : sentences) findings.insert(findings.end(), s.begin(), s.end());

  std::vector<std::string> impression;
  for (std::size_t i = 0; i < scene.attributes.size(); ++i) {
    if (i) impression.emplace_back(lexicon::kJoin);
    const auto& tmpl = lexicon::kImpressionTemplates[rng.below(lexicon::kImpressionTemplates.size())];
    auto clause = fill(tmpl, scene.attributes[i], rng, true);
    impression.insert(impression.end(), clause.begin(), clause.end());
  }
  if (scene.attributes.empty()) {
    const auto& e = lexicon::kImpressionEmpty[rng.below(lexicon::kImpressionEmpty.size())];
    impression.assign(e.begin(), e.end());
  }

  Report r;
  r.findings = tokenize(findings);
  r.impression = tokenize(impression);
  r.labels = labels_of(scene);
  return r;
}

std::string fraction_key(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", fraction);
  return buf;
}

namespace {

constexpr std::size_t kPixels = kImageSize * kImageSize;

void validate(std::size_t n, const SplitFractions& f) {
  if (n < 10) throw ContractError("dataset needs n >= 10, got " + std::to_string(n));
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ContractError("split fractions must be non-negative and sum to 1");
  }
}

}  // namespace

Dataset Dataset::generate(std::size_t n, std::uint64_t seed, SplitFractions fracs, int max_attrs) {
  validate(n, fracs);
  Dataset ds;
  ds.manifest_.n = n;
  ds.manifest_.seed = seed;
  ds.manifest_.max_attrs = max_attrs;
  ds.manifest_.fracs = fracs;
  ds.samples_.resize(n);
  ds.pixels_.resize(n * kPixels);
  for (std::uint32_t id = 0; id < n; ++id) {
    auto& s = ds.samples_[id];
    s.id = id;
    s.seed = derive_seed(seed, id);
    s.scene = generate_scene(s.seed, max_attrs);
    s.report = write_report(s.scene, derive_seed(s.seed, 7));
    auto img = render_image(s.scene);
    std::copy(img.data().begin(), img.data().end(), ds.pixels_.begin() + static_cast<std::ptrdiff_t>(id * kPixels));
  }

  std::vector<std::uint32_t> ids(n);
  for (std::uint32_t i = 0; i < n; ++i) ids[i] = i;
  Rng split_rng(derive_seed(seed, 0xA11));
  split_rng.shuffle(ids);
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fracs.train));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(static_cast<double>(n) * fracs.val)));
  auto& m = ds.manifest_;
  m.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  m.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
               ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  m.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  std::sort(m.train.begin(), m.train.end());
  std::sort(m.val.begin(), m.val.end());
  std::sort(m.test.begin(), m.test.end());

  std::vector<std::uint32_t> order = m.train;
  Rng frac_rng(derive_seed(seed, 0xF4));
  frac_rng.shuffle(order);
  for (double f : kStandardFractions) {
    const auto count = std::max<std::size_t>(
        std::min<std::size_t>(1, order.size()),
        static_cast<std::size_t>(std::llround(f * static_cast<double>(order.size()))));
    m.fractions[fraction_key(f)].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  }
  return ds;
}

std::span<const double> Dataset::image(std::uint32_t id) const {
  if (id >= samples_.size()) throw ContractError("sample id out of range");
  return std::span<const double>(pixels_).subspan(id * kPixels, kPixels);
}

Tensor Dataset::image_tensor(std::uint32_t id) const {
  auto px = image(id);
  return Tensor::from({1, kImageSize, kImageSize}, std::vector<double>(px.begin(), px.end()));
}

const std::vector<std::uint32_t>& Dataset::split(const std::string& name) const {
  if (name == "train") return manifest_.train;
  if (name == "val") return manifest_.val;
  if (name == "test") return manifest_.test;
  throw ContractError("unknown split '" + name + "'");
}

const std::vector<std::uint32_t>& Dataset::fraction(double f) const {
  auto it = manifest_.fractions.find(fraction_key(f));
  if (it == manifest_.fractions.end()) {
    throw ContractError("no training subset for fraction " + fraction_key(f));
  }
  return it->second;
}

void Dataset::save(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());

  const std::size_t record_bytes = 4 + 4 + 3 * 4 + kPixels * 8;
  json records = json::array();
  for (const auto& s : samples_) {
    json attrs = json::array();
    for (const auto& a : s.scene.attributes)
      attrs.push_back({static_cast<int>(a.shape), static_cast<int>(a.intensity), static_cast<int>(a.quadrant)});
    records.push_back({{"id", s.id},
                       {"seed", s.seed},
                       {"image_offset", s.id * record_bytes},
                       {"attributes", attrs},
                       {"findings", s.report.findings.ids},
                       {"impression", s.report.impression.ids},
                       {"labels", s.report.labels}});
  }
  json fr = json::object();
  for (const auto& [k, v] : manifest_.fractions) fr[k] = v;
  json manifest{{"format", "pairforge-dataset"},
                {"version", 1},
                {"n", manifest_.n},
                {"seed", manifest_.seed},
                {"max_attrs", manifest_.max_attrs},
                {"split_fracs", {manifest_.fracs.train, manifest_.fracs.val, manifest_.fracs.test}},
                {"counts", {{"train", manifest_.train.size()}, {"val", manifest_.val.size()}, {"test", manifest_.test.size()}}},
                {"image_shape", {1, kImageSize, kImageSize}},
                {"max_len", kMaxLen},
                {"vocab", vocabulary().words()},
                {"splits", {{"train", manifest_.train}, {"val", manifest_.val}, {"test", manifest_.test}}},
                {"fractions", fr},
                {"records", records}};

  std::ofstream mf(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!mf) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  mf << manifest.dump(1) << '\n';
  if (!mf) throw std::runtime_error("write failed: " + (dir / "manifest.json").string());

  std::ofstream ib(dir / "images.bin", std::ios::binary | std::ios::trunc);
  if (!ib) throw std::runtime_error("cannot write " + (dir / "images.bin").string());
  for (const auto& s : samples_) write_tensor(ib, image_tensor(s.id));
  if (!ib) throw std::runtime_error("write failed: " + (dir / "images.bin").string());
}

Dataset Dataset::load(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json", std::ios::binary);
  if (!mf) throw std::runtime_error("cannot open " + (dir / "manifest.json").string());
  json j;
  try {
    j = json::parse(mf);
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest: " + std::string(e.what()));
  }
  if (j.value("format", "") != "pairforge-dataset") throw FormatError("not a pairforge dataset manifest");
  if (j.at("vocab").get<std::vector<std::string>>() != vocabulary().words()) {
    throw FormatError("dataset vocabulary does not match this build");
  }
  Dataset ds;
  auto& m = ds.manifest_;
  m.n = j.at("n").get<std::size_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.max_attrs = j.at("max_attrs").get<int>();
  auto sf = j.at("split_fracs").get<std::vector<double>>();
  m.fracs = {sf.at(0), sf.at(1), sf.at(2)};
  m.train = j.at("splits").at("train").get<std::vector<std::uint32_t>>();
  m.val = j.at("splits").at("val").get<std::vector<std::uint32_t>>();
  m.test = j.at("splits").at("test").get<std::vector<std::uint32_t>>();
  for (const auto& [k, v] : j.at("fractions").items()) m.fractions[k] = v.get<std::vector<std::uint32_t>>();

  ds.samples_.resize(m.n);
  for (const auto& r : j.at("records")) {
    const auto id = r.at("id").get<std::uint32_t>();
    if (id >= m.n) throw FormatError("record id out of range");
    auto& s = ds.samples_[id];
    s.id = id;
    s.seed = r.at("seed").get<std::uint64_t>();
    s.scene.seed = s.seed;
    for (const auto& a : r.at("attributes"))
      s.scene.attributes.push_back({static_cast<ShapeKind>(a.at(0).get<int>()),
                                    static_cast<Intensity>(a.at(1).get<int>()),
                                    static_cast<Quadrant>(a.at(2).get<int>())});
    s.report.findings.ids = r.at("findings").get<std::vector<std::uint32_t>>();
    s.report.impression.ids = r.at("impression").get<std::vector<std::uint32_t>>();
    s.report.labels = r.at("labels").get<Labels>();
  }

  std::ifstream ib(dir / "images.bin", std::ios::binary);
  if (!ib) throw std::runtime_error("cannot open " + (dir / "images.bin").string());
  ds.pixels_.resize(m.n * kPixels);
  for (std::size_t id = 0; id < m.n; ++id) {
    auto t = read_tensor(ib);
    if (t.shape() != Shape{1, kImageSize, kImageSize}) throw FormatError("unexpected image shape");
    std::copy(t.data().begin(), t.data().end(), ds.pixels_.begin() + static_cast<std::ptrdiff_t>(id * kPixels));
  }
  return ds;
}

DatasetManifest build_dataset(std::size_t n, std::uint64_t seed, const std::filesystem::path& out_dir,
                              SplitFractions fracs, int max_attrs) {
  auto ds = Dataset::generate(n, seed, fracs, max_attrs);
  ds.save(out_dir);
  return ds.manifest();
}

}  // namespace pf::synth
