#include "tra/lcfcn.hpp"

#include <algorithm>
#include <queue>

namespace tra {

std::set<int> AnnotationSet::present_classes() const {
  std::set<int> s;
  for (const auto& p : points) s.insert(p.cls);
  return s;
}

std::set<int> AnnotationSet::absent_classes() const {
  const auto present = present_classes();
  std::set<int> s;
  for (int c = 1; c < num_classes; ++c)
    if (!present.count(c)) s.insert(c);
  return s;
}

void AnnotationSet::validate(int h, int w) const {
  for (const auto& p : points) {
    if (p.cls < 1 || p.cls >= num_classes)
      throw std::invalid_argument("annotation class out of range");
    if (p.row < 0 || p.row >= h || p.col < 0 || p.col >= w)
      throw std::out_of_range("annotation point outside image bounds");
  }
}

std::pair<std::vector<int>, int> connected_components(
    const std::vector<uint8_t>& mask, int h, int w, int connectivity) {
  if (connectivity != 4 && connectivity != 8)
    throw std::invalid_argument("connected_components: connectivity 4 or 8");
  if (static_cast<int64_t>(mask.size()) != static_cast<int64_t>(h) * w)
    throw std::invalid_argument("connected_components: mask size mismatch");

  static const int dy8[] = {-1, -1, -1, 0, 0, 1, 1, 1};
  static const int dx8[] = {-1, 0, 1, -1, 1, -1, 0, 1};
  static const int dy4[] = {-1, 0, 0, 1};
  static const int dx4[] = {0, -1, 1, 0};
  const int* dy = connectivity == 4 ? dy4 : dy8;
  const int* dx = connectivity == 4 ? dx4 : dx8;
  const int ndirs = connectivity;

  std::vector<int> labels(mask.size(), 0);
  int count = 0;
  std::vector<int> stack;
  for (int i = 0; i < h * w; ++i) {
    if (!mask[i] || labels[i]) continue;
    ++count;
    labels[i] = count;
    stack.assign(1, i);
    while (!stack.empty()) {
      const int cur = stack.back();
      stack.pop_back();
      const int cy = cur / w, cx = cur % w;
      for (int d = 0; d < ndirs; ++d) {
        const int ny = cy + dy[d], nx = cx + dx[d];
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        const int ni = ny * w + nx;
        if (mask[ni] && !labels[ni]) {
          labels[ni] = count;
          stack.push_back(ni);
        }
      }
    }
  }
  return {std::move(labels), count};
}

std::vector<uint8_t> foreground_mask(const ProbabilityMap& probs, int cls) {
  if (cls < 1) throw std::invalid_argument("foreground_mask: cls must be >= 1");
  const int c = probs.dim(2);
  const int64_t n = probs.size() / c;
  std::vector<uint8_t> mask(n, 0);
  const double* p = probs.data();
  for (int64_t i = 0; i < n; ++i) {
    int best = 0;
    for (int ch = 1; ch < c; ++ch)
      if (p[i * c + ch] > p[i * c + best]) best = ch;
    mask[i] = best == cls ? 1 : 0;
  }
  return mask;
}

std::vector<int> watershed_lines(const std::vector<double>& elevation, int h,
                                 int w, const std::vector<Point>& seeds,
                                 const std::vector<uint8_t>& domain) {
  const bool restricted = !domain.empty();
  auto in_domain = [&](int idx) { return !restricted || domain[idx] != 0; };

  constexpr int kLine = -1;
  std::vector<int> label(static_cast<size_t>(h) * w, 0);
  std::vector<uint8_t> queued(static_cast<size_t>(h) * w, 0);

  struct Entry {
    double elev;
    int idx;
  };
  auto cmp = [](const Entry& a, const Entry& b) {
    if (a.elev != b.elev) return a.elev < b.elev;  // top = highest elevation
    return a.idx > b.idx;                          // tie: lowest raster index
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(cmp)> pq(cmp);

  static const int dy[] = {-1, 0, 0, 1};
  static const int dx[] = {0, -1, 1, 0};

  int basin = 0;
  for (const auto& s : seeds) {
    const int idx = s.row * w + s.col;
    ++basin;
    if (!in_domain(idx))
      throw std::invalid_argument("watershed: seed outside domain");
    if (label[idx] != 0) continue;  // coincident seeds share a basin
    label[idx] = basin;
  }
  for (const auto& s : seeds) {
    const int sy = s.row, sx = s.col;
    for (int d = 0; d < 4; ++d) {
      const int ny = sy + dy[d], nx = sx + dx[d];
      if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
      const int ni = ny * w + nx;
      if (in_domain(ni) && label[ni] == 0 && !queued[ni]) {
        queued[ni] = 1;
        pq.push({elevation[ni], ni});
      }
    }
  }

  while (!pq.empty()) {
    const int idx = pq.top().idx;
    pq.pop();
    if (label[idx] != 0) continue;
    const int cy = idx / w, cx = idx % w;
    int first_basin = 0;
    bool multiple = false;
    for (int d = 0; d < 4; ++d) {
      const int ny = cy + dy[d], nx = cx + dx[d];
      if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
      const int ni = ny * w + nx;
      if (!in_domain(ni)) continue;
      const int l = label[ni];
      if (l > 0) {
        if (first_basin == 0)
          first_basin = l;
        else if (l != first_basin)
          multiple = true;
      }
    }
    label[idx] = multiple || first_basin == 0 ? kLine : first_basin;
    for (int d = 0; d < 4; ++d) {
      const int ny = cy + dy[d], nx = cx + dx[d];
      if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
      const int ni = ny * w + nx;
      if (in_domain(ni) && label[ni] == 0 && !queued[ni]) {
        queued[ni] = 1;
        pq.push({elevation[ni], ni});
      }
    }
  }

  std::vector<int> lines;
  for (int i = 0; i < h * w; ++i)
    if (label[i] == kLine) lines.push_back(i);
  return lines;
}

std::vector<int> watershed_split(const ProbabilityMap& probs,
                                 const AnnotationSet& ann,
                                 const BlobSet& blobs) {
  const int h = blobs.h, w = blobs.w;
  const int c = probs.dim(2);
  std::vector<Point> seeds;
  for (const auto& p : ann.points)
    if (p.cls == blobs.cls) seeds.push_back(p);
  if (seeds.size() < 2) return {};

  std::vector<double> elev(static_cast<size_t>(h) * w);
  const double* pv = probs.data();
  for (int64_t i = 0; i < h * w; ++i) elev[i] = pv[i * c + blobs.cls];

  std::set<int> lines;
  for (int i : watershed_lines(elev, h, w, seeds)) lines.insert(i);

  for (int b = 0; b < blobs.count; ++b) {
    if (blobs.annotation_count[b] < 2) continue;
    std::vector<uint8_t> domain(static_cast<size_t>(h) * w, 0);
    for (int i : blobs.blob_pixels[b]) domain[i] = 1;
    std::vector<Point> local_seeds;
    for (const auto& s : seeds)
      if (domain[s.row * w + s.col]) local_seeds.push_back(s);
    if (local_seeds.size() < 2) continue;
    for (int i : watershed_lines(elev, h, w, local_seeds, domain))
      lines.insert(i);
  }
  return {lines.begin(), lines.end()};
}

BlobSet derive_blobs(const ProbabilityMap& probs, const AnnotationSet& ann,
                     int cls) {
  BlobSet bs;
  bs.h = probs.dim(0);
  bs.w = probs.dim(1);
  bs.cls = cls;
  const auto mask = foreground_mask(probs, cls);
  auto [labels, count] = connected_components(mask, bs.h, bs.w, 4);
  bs.labels = std::move(labels);
  bs.count = count;
  bs.blob_pixels.assign(count, {});
  for (int i = 0; i < bs.h * bs.w; ++i)
    if (bs.labels[i] > 0) bs.blob_pixels[bs.labels[i] - 1].push_back(i);
  bs.annotation_count.assign(count, 0);
  for (const auto& p : ann.points) {
    if (p.cls != cls) continue;
    const int l = bs.labels[p.row * bs.w + p.col];
    if (l > 0) ++bs.annotation_count[l - 1];
  }
  bs.split_boundaries = watershed_split(probs, ann, bs);
  for (int b = 0; b < count; ++b)
    if (bs.annotation_count[b] == 0)
      bs.false_positive_pixels.insert(bs.false_positive_pixels.end(),
                                      bs.blob_pixels[b].begin(),
                                      bs.blob_pixels[b].end());
  std::sort(bs.false_positive_pixels.begin(), bs.false_positive_pixels.end());
  return bs;
}

Tensor image_level_loss(Tape* tape, const ProbabilityMap& probs,
                        const AnnotationSet& ann) {
  const int c = probs.dim(2);
  const int64_t n = probs.size() / c;
  const auto present = ann.present_classes();
  const auto absent = ann.absent_classes();
  const double* pv = probs.data();

  std::vector<LogGatherEntry> entries;
  for (int cls = 1; cls < ann.num_classes; ++cls) {
    if (cls >= c) throw std::invalid_argument("image_level_loss: class id >= channels");
    int64_t tc = 0;
    for (int64_t i = 1; i < n; ++i)
      if (pv[i * c + cls] > pv[tc * c + cls]) tc = i;
    if (present.count(cls))
      entries.push_back({static_cast<int>(tc), cls,
                         1.0 / static_cast<double>(present.size()), false});
    else
      entries.push_back({static_cast<int>(tc), cls,
                         1.0 / static_cast<double>(absent.size()), true});
  }
  return neg_log_gather(tape, probs, entries);
}

Tensor point_level_loss(Tape* tape, const ProbabilityMap& probs,
                        const AnnotationSet& ann) {
  ann.validate(probs.dim(0), probs.dim(1));
  std::vector<LogGatherEntry> entries;
  for (const auto& p : ann.points)
    entries.push_back({p.row * probs.dim(1) + p.col, p.cls, 1.0, false});
  return neg_log_gather(tape, probs, entries);
}

Tensor split_level_loss(Tape* tape, const ProbabilityMap& probs,
                        const AnnotationSet& ann, const BlobSet& blobs) {
  (void)ann;
  std::vector<LogGatherEntry> entries;
  for (int i : blobs.split_boundaries) {
    const int l = blobs.labels[i];
    const double alpha = l > 0 ? blobs.annotation_count[l - 1] : 1.0;
    if (alpha == 0.0) continue;
    entries.push_back({i, 0, alpha, false});
  }
  return neg_log_gather(tape, probs, entries);
}

Tensor false_positive_loss(Tape* tape, const ProbabilityMap& probs,
                           const BlobSet& blobs) {
  std::vector<LogGatherEntry> entries;
  for (int i : blobs.false_positive_pixels)
    entries.push_back({i, 0, 1.0, false});
  return neg_log_gather(tape, probs, entries);
}

Tensor lcfcn_loss(Tape* tape, const ProbabilityMap& probs,
                  const AnnotationSet& ann, LossBreakdown* breakdown) {
  ann.validate(probs.dim(0), probs.dim(1));
  Tensor li = image_level_loss(tape, probs, ann);
  Tensor lp = point_level_loss(tape, probs, ann);
  Tensor total = add(tape, li, lp);
  double split_total = 0.0, fp_total = 0.0;
  for (int cls = 1; cls < ann.num_classes; ++cls) {
    const BlobSet blobs = derive_blobs(probs, ann, cls);
    Tensor ls = split_level_loss(tape, probs, ann, blobs);
    Tensor lf = false_positive_loss(tape, probs, blobs);
    split_total += ls.value();
    fp_total += lf.value();
    total = add(tape, total, add(tape, ls, lf));
  }
  if (breakdown) {
    breakdown->image = li.value();
    breakdown->point = lp.value();
    breakdown->split = split_total;
    breakdown->false_positive = fp_total;
    breakdown->total = total.value();
  }
  return total;
}

}  // namespace tra
