#include "tra/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "tra/config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tra {

void Sample::validate() const {
  auto check_point = [&](const Point& p, const char* name) {
    if (p.row < 0 || p.row >= image.h || p.col < 0 || p.col >= image.w)
      throw std::runtime_error("sample " + id + ": " + name +
                               " point outside image");
  };
  check_point(top, "top");
  check_point(bottom, "bottom");
  if (top.row >= bottom.row)
    throw std::runtime_error("sample " + id + ": top.row must be < bottom.row");
  if (mm_per_pixel <= 0.0)
    throw std::runtime_error("sample " + id + ": non-positive mm_per_pixel");
}

std::vector<Sample> load_dataset(const std::string& root) {
  if (!fs::exists(root))
    throw std::runtime_error("dataset root does not exist: " + root);
  const fs::path ann_dir = fs::path(root) / "annotations";
  std::vector<Sample> samples;
  if (!fs::exists(ann_dir)) return samples;

  std::vector<fs::path> ann_files;
  for (const auto& e : fs::directory_iterator(ann_dir))
    if (e.path().extension() == ".json") ann_files.push_back(e.path());
  std::sort(ann_files.begin(), ann_files.end());

  for (const auto& path : ann_files) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    json j;
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw std::runtime_error("malformed annotation " + path.string() + ": " +
                               e.what());
    }
    Sample s;
    try {
      s.id = j.at("id").get<std::string>();
      s.top = {j.at("top").at(0).get<int>(), j.at("top").at(1).get<int>(), 1};
      s.bottom = {j.at("bottom").at(0).get<int>(),
                  j.at("bottom").at(1).get<int>(), 1};
      s.mm_per_pixel = j.at("mm_per_pixel").get<double>();
      s.state = j.value("state", "resting");
    } catch (const json::exception& e) {
      throw std::runtime_error("malformed annotation " + path.string() + ": " +
                               e.what());
    }
    const fs::path img = fs::path(root) / "images" / (s.id + ".png");
    if (!fs::exists(img))
      throw std::runtime_error("missing image for annotation " +
                               path.string() + ": " + img.string());
    s.image = read_png_gray(img.string());
    try {
      s.validate();
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string(e.what()) + " (from " +
                               path.string() + ")");
    }
    samples.push_back(std::move(s));
  }
  std::sort(samples.begin(), samples.end(),
            [](const Sample& a, const Sample& b) { return a.id < b.id; });
  return samples;
}

void save_dataset(const std::string& root,
                  const std::vector<Sample>& samples) {
  fs::create_directories(fs::path(root) / "images");
  fs::create_directories(fs::path(root) / "annotations");
  std::ofstream truth(fs::path(root) / "truth.csv");
  if (!truth) throw std::runtime_error("cannot write truth.csv under " + root);
  truth << "id,thickness_mm\n";
  truth.precision(17);
  for (const auto& s : samples) {
    write_png_gray((fs::path(root) / "images" / (s.id + ".png")).string(),
                   s.image.px, s.image.h, s.image.w);
    json j;
    j["id"] = s.id;
    j["top"] = {s.top.row, s.top.col};
    j["bottom"] = {s.bottom.row, s.bottom.col};
    j["mm_per_pixel"] = s.mm_per_pixel;
    j["state"] = s.state;
    std::ofstream os(fs::path(root) / "annotations" / (s.id + ".json"));
    os << j.dump(2) << "\n";
    const double len = std::hypot(double(s.bottom.row - s.top.row),
                                  double(s.bottom.col - s.top.col));
    truth << s.id << "," << len * s.mm_per_pixel << "\n";
  }
}

DatasetConfig load_dataset_config(const std::string& root) {
  DatasetConfig cfg;
  const fs::path path = fs::path(root) / "dataset.toml";
  if (!fs::exists(path)) return cfg;
  const auto kv = KeyValueConfig::parse_file(path.string());
  cfg.target_h = static_cast<int>(kv.get_int("dataset.target_h", cfg.target_h));
  cfg.target_w = static_cast<int>(kv.get_int("dataset.target_w", cfg.target_w));
  if (kv.has("dataset.roi_row")) {
    Rect roi;
    roi.row = static_cast<int>(kv.get_int("dataset.roi_row", 0));
    roi.col = static_cast<int>(kv.get_int("dataset.roi_col", 0));
    roi.h = static_cast<int>(kv.get_int("dataset.roi_h", 0));
    roi.w = static_cast<int>(kv.get_int("dataset.roi_w", 0));
    cfg.roi = roi;
  }
  return cfg;
}

Sample crop_roi(const Sample& sample, const Rect& roi) {
  if (roi.row < 0 || roi.col < 0 || roi.h < 1 || roi.w < 1 ||
      roi.row + roi.h > sample.image.h || roi.col + roi.w > sample.image.w)
    throw std::invalid_argument("crop_roi: roi outside image for sample " +
                                sample.id);
  auto inside = [&](const Point& p) {
    return p.row >= roi.row && p.row < roi.row + roi.h && p.col >= roi.col &&
           p.col < roi.col + roi.w;
  };
  if (!inside(sample.top) || !inside(sample.bottom))
    throw std::runtime_error("crop_roi: annotation outside roi for sample " +
                             sample.id);
  Sample out = sample;
  out.image.h = roi.h;
  out.image.w = roi.w;
  out.image.px.resize(static_cast<size_t>(roi.h) * roi.w);
  for (int y = 0; y < roi.h; ++y)
    for (int x = 0; x < roi.w; ++x)
      out.image.px[static_cast<size_t>(y) * roi.w + x] =
          sample.image.px[static_cast<size_t>(y + roi.row) * sample.image.w +
                          x + roi.col];
  out.top.row -= roi.row;
  out.top.col -= roi.col;
  out.bottom.row -= roi.row;
  out.bottom.col -= roi.col;
  return out;
}

std::vector<double> resize_bilinear(const std::vector<double>& src, int h,
                                    int w, int th, int tw) {
  if (th == h && tw == w) return src;
  std::vector<double> dst(static_cast<size_t>(th) * tw);
  const double fy = static_cast<double>(h) / th;
  const double fx = static_cast<double>(w) / tw;
  for (int oy = 0; oy < th; ++oy) {
    double sy = std::clamp((oy + 0.5) * fy - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = sy - y0;
    for (int ox = 0; ox < tw; ++ox) {
      double sx = std::clamp((ox + 0.5) * fx - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = sx - x0;
      dst[static_cast<size_t>(oy) * tw + ox] =
          (1 - wy) * ((1 - wx) * src[static_cast<size_t>(y0) * w + x0] +
                      wx * src[static_cast<size_t>(y0) * w + x1]) +
          wy * ((1 - wx) * src[static_cast<size_t>(y1) * w + x0] +
                wx * src[static_cast<size_t>(y1) * w + x1]);
    }
  }
  return dst;
}

Preprocessed preprocess(const Sample& sample, int target_h, int target_w) {
  sample.validate();
  Preprocessed out;
  out.resized01 =
      resize_bilinear(sample.image.px, sample.image.h, sample.image.w,
                      target_h, target_w);
  const double sy = static_cast<double>(target_h) / sample.image.h;
  const double sx = static_cast<double>(target_w) / sample.image.w;
  out.top_row = sample.top.row * sy;
  out.top_col = sample.top.col * sx;
  out.bottom_row = sample.bottom.row * sy;
  out.bottom_col = sample.bottom.col * sx;

  auto clamp_point = [&](double r, double c) -> Point {
    return {std::clamp(static_cast<int>(std::lround(r)), 0, target_h - 1),
            std::clamp(static_cast<int>(std::lround(c)), 0, target_w - 1), 1};
  };
  out.ann.num_classes = 2;
  out.ann.points = {clamp_point(out.top_row, out.top_col),
                    clamp_point(out.bottom_row, out.bottom_col)};

  // mm per model-space pixel along each axis; stored as geometric mean plus
  // anisotropy ratio.
  const double mm_y = sample.mm_per_pixel / sy;
  const double mm_x = sample.mm_per_pixel / sx;
  out.mm_per_pixel = std::sqrt(mm_y * mm_x);
  out.anisotropy = mm_y / mm_x;

  Tensor input({target_h, target_w, 1});
  for (int64_t i = 0; i < input.size(); ++i)
    input[i] = normalize_intensity(out.resized01[i]);
  out.input = input;
  return out;
}

std::vector<double> apply_photometric(const std::vector<double>& img01,
                                      const PhotometricParams& p) {
  double mean = 0.0;
  for (double v : img01) mean += v;
  mean /= static_cast<double>(img01.size());
  std::vector<double> out(img01.size());
  for (size_t i = 0; i < img01.size(); ++i) {
    double v = mean + (img01[i] - mean) * p.contrast + p.brightness;
    v = std::clamp(v, 0.0, 1.0);
    v = std::pow(v, p.gamma);
    out[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

std::vector<double> augment(const std::vector<double>& img01,
                            std::mt19937_64& rng) {
  std::uniform_real_distribution<double> contrast(0.8, 1.2);
  std::uniform_real_distribution<double> brightness(-0.1, 0.1);
  std::uniform_real_distribution<double> gamma(0.8, 1.25);
  PhotometricParams p;
  p.contrast = contrast(rng);
  p.brightness = brightness(rng);
  p.gamma = gamma(rng);
  return apply_photometric(img01, p);
}

std::vector<Sample> synth_generate(int count, int h, int w,
                                   std::mt19937_64& rng) {
  if (count < 1) throw std::invalid_argument("synth_generate: count >= 1");
  if (h < 64 || w < 64)
    throw std::invalid_argument("synth_generate: size must be >= 64x64");

  const double mmpp = 12.8 / h;  // 0.1 mm/px at h = 128
  const int gap_min =
      std::max(2, static_cast<int>(std::ceil(1.05 / mmpp)));
  const int gap_max = static_cast<int>(std::floor(8.02 / mmpp));

  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Sample> samples;
  samples.reserve(count);

  for (int idx = 0; idx < count; ++idx) {
    const bool resting = idx % 2 == 0;
    const double mean = resting ? 3.03 : 5.25;
    const double sd = resting ? 0.8 : 1.0;
    const double lo = resting ? 1.05 : 2.07;
    const double hi = resting ? 5.24 : 8.02;
    double t_mm;
    do {
      t_mm = mean + sd * gauss(rng);
    } while (t_mm < lo || t_mm > hi);
    const int gap = std::clamp(static_cast<int>(std::lround(t_mm / mmpp)),
                               gap_min, gap_max);

    // Single-pixel bands make each band's centre coincide with the inner
    // edge the endpoint sits on, so blob centroids are unbiased estimators
    // of the annotated rows.
    const int bw_u = 1;
    const int bw_l = 1;
    // Gentle curvature and tight appearance ranges keep the scenes varied
    // but learnable within the short default training schedule.
    const double amp = 0.5 + uni(rng) * 1.5;
    const double freq = 0.5 + uni(rng);
    const double phase = uni(rng) * 2.0 * M_PI;
    const double slope = (uni(rng) - 0.5) * 0.03;

    const int u_lo = bw_u + static_cast<int>(std::ceil(amp)) + 2;
    const int u_hi = h - 3 - gap - bw_l - static_cast<int>(std::ceil(amp));
    if (u_hi < u_lo)
      throw std::runtime_error("synth_generate: image too small for bands");
    const int u0 = u_lo + static_cast<int>(uni(rng) * (u_hi - u_lo + 1));

    std::vector<int> inner_top(w);
    for (int x = 0; x < w; ++x) {
      const double u = u0 + amp * std::sin(2.0 * M_PI * freq * x / w + phase) +
                       slope * (x - w / 2.0);
      inner_top[x] = std::clamp(static_cast<int>(std::lround(u)), bw_u,
                                h - 1 - gap - bw_l);
    }

    // Smooth dark base: bilinear blend of four random corner intensities.
    double corners[4];
    for (double& c : corners) c = 0.10 + 0.06 * uni(rng);
    const double band_base = 0.78 + 0.06 * uni(rng);
    const double band_freq = 0.5 + uni(rng);
    const double band_phase = uni(rng) * 2.0 * M_PI;

    // The caliper sits where the sonographer focused the probe, so the bands
    // are brightest at the annotated column and fade away from it. This makes
    // the measured column visually identifiable, not just a label.
    const int x0 = w / 4 + static_cast<int>(uni(rng) * (w / 2));
    const double focal_sigma = w / 10.0;

    GrayImage img;
    img.h = h;
    img.w = w;
    img.px.resize(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
      const double fy = static_cast<double>(y) / (h - 1);
      for (int x = 0; x < w; ++x) {
        const double fx = static_cast<double>(x) / (w - 1);
        double v = (1 - fy) * ((1 - fx) * corners[0] + fx * corners[1]) +
                   fy * ((1 - fx) * corners[2] + fx * corners[3]);
        const int u = inner_top[x];
        const bool in_upper = y >= u - bw_u + 1 && y <= u;
        const bool in_lower = y >= u + gap && y <= u + gap + bw_l - 1;
        if (in_upper || in_lower) {
          const double d = (x - x0) / focal_sigma;
          const double focal = 0.55 + 0.45 * std::exp(-0.5 * d * d);
          v = (band_base +
               0.03 * std::sin(2.0 * M_PI * band_freq * x / w + band_phase)) *
              focal;
        }
        v *= 1.0 + 0.08 * (2.0 * uni(rng) - 1.0);  // multiplicative speckle
        v = std::clamp(v, 0.0, 1.0);
        img.px[static_cast<size_t>(y) * w + x] =
            std::lround(v * 255.0) / 255.0;  // 8-bit quantization
      }
    }

    Sample s;
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%04d", idx);
    s.id = id;
    s.image = std::move(img);
    s.top = {inner_top[x0], x0, 1};
    s.bottom = {inner_top[x0] + gap, x0, 1};
    s.mm_per_pixel = mmpp;
    s.state = resting ? "resting" : "contracted";
    s.validate();
    samples.push_back(std::move(s));
  }
  return samples;
}

FoldPlan kfold_split(std::vector<std::string> ids, int k,
                     std::mt19937_64& rng) {
  const int n = static_cast<int>(ids.size());
  if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
  if (k > n)
    throw std::invalid_argument("kfold_split: k exceeds number of ids");
  std::shuffle(ids.begin(), ids.end(), rng);

  std::vector<std::vector<std::string>> chunks(k);
  const int base = n / k, rem = n % k;
  int pos = 0;
  for (int f = 0; f < k; ++f) {
    const int len = base + (f < rem ? 1 : 0);
    chunks[f].assign(ids.begin() + pos, ids.begin() + pos + len);
    pos += len;
  }

  FoldPlan plan;
  plan.k = k;
  plan.test_ids.resize(k);
  plan.val_ids.resize(k);
  plan.train_ids.resize(k);
  for (int f = 0; f < k; ++f) {
    plan.test_ids[f] = chunks[f];
    plan.val_ids[f] = chunks[(f + 1) % k];
    if (k == 2) {
      // Two chunks leave nothing for a third subset; train on the
      // validation chunk so smoke configurations still work.
      plan.train_ids[f] = plan.val_ids[f];
    } else {
      for (int g = 0; g < k; ++g)
        if (g != f && g != (f + 1) % k)
          plan.train_ids[f].insert(plan.train_ids[f].end(), chunks[g].begin(),
                                   chunks[g].end());
    }
  }
  return plan;
}

}  // namespace tra
