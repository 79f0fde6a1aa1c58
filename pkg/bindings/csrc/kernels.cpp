// Batched kernels mirroring the rboxkit reference implementation.
//
// Every arithmetic expression below follows the reference operation order so
// results match bit-for-bit on the shared fixture corpus. Inputs are copied
// out of NumPy buffers under the GIL; the GIL is released during compute.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace py = pybind11;

namespace {

constexpr double kClipEps = 1e-9;
constexpr double kMinExtent = 1e-6;
constexpr double kMaxDecodeExtent = 1e6;
constexpr double kAngleScale = 1.0 / 90.0;
constexpr double kProbEps = 1e-7;
constexpr double kIouClamp = 1e-6;

struct Box {
  double cx, cy, w, h, theta;
};

struct Pt {
  double x, y;
};

void validate_box(const Box& b, const char* what) {
  const double fields[5] = {b.cx, b.cy, b.w, b.h, b.theta};
  for (double v : fields) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite box field");
  }
  if (b.w <= kMinExtent || b.h <= kMinExtent) {
    throw std::invalid_argument(std::string(what) + ": box extent below minimum");
  }
}

bool box_equal(const Box& a, const Box& b) {
  return a.cx == b.cx && a.cy == b.cy && a.w == b.w && a.h == b.h && a.theta == b.theta;
}

bool box_less(const Box& a, const Box& b) {
  if (a.cx != b.cx) return a.cx < b.cx;
  if (a.cy != b.cy) return a.cy < b.cy;
  if (a.w != b.w) return a.w < b.w;
  if (a.h != b.h) return a.h < b.h;
  return a.theta < b.theta;
}

Box canonicalize(double cx, double cy, double w, double h, double theta) {
  const double reduced = theta - 180.0 * std::floor((theta + 90.0) / 180.0);
  if (reduced >= 0.0) return Box{cx, cy, h, w, reduced - 90.0};
  return Box{cx, cy, w, h, reduced};
}

void box_corners(const Box& b, Pt out[4]) {
  const double rad = b.theta * (M_PI / 180.0);
  const double c = std::cos(rad);
  const double s = std::sin(rad);
  const double wx = c * (b.w * 0.5);
  const double wy = s * (b.w * 0.5);
  const double hx = -s * (b.h * 0.5);
  const double hy = c * (b.h * 0.5);
  out[0] = {b.cx - wx - hx, b.cy - wy - hy};
  out[1] = {b.cx + wx - hx, b.cy + wy - hy};
  out[2] = {b.cx + wx + hx, b.cy + wy + hy};
  out[3] = {b.cx - wx + hx, b.cy - wy + hy};
}

std::vector<Pt> dedupe(const std::vector<Pt>& poly) {
  std::vector<Pt> out;
  for (const Pt& p : poly) {
    if (out.empty() || std::fabs(p.x - out.back().x) > kClipEps || std::fabs(p.y - out.back().y) > kClipEps) {
      out.push_back(p);
    }
  }
  while (out.size() > 1 && std::fabs(out.front().x - out.back().x) <= kClipEps &&
         std::fabs(out.front().y - out.back().y) <= kClipEps) {
    out.pop_back();
  }
  return out;
}

std::vector<Pt> convex_clip(const std::vector<Pt>& subject, const Pt clip[4]) {
  std::vector<Pt> output = subject;
  for (int i = 0; i < 4; ++i) {
    if (output.empty()) return {};
    const double ax = clip[i].x, ay = clip[i].y;
    const double bx = clip[(i + 1) % 4].x, by = clip[(i + 1) % 4].y;
    const double ex = bx - ax, ey = by - ay;
    std::vector<Pt> input;
    input.swap(output);
    double sx = input.back().x, sy = input.back().y;
    bool s_in = ex * (sy - ay) - ey * (sx - ax) >= -kClipEps;
    for (const Pt& p : input) {
      const double px = p.x, py_ = p.y;
      const bool p_in = ex * (py_ - ay) - ey * (px - ax) >= -kClipEps;
      if (p_in != s_in) {
        const double dx = px - sx, dy = py_ - sy;
        const double denom = ex * dy - ey * dx;
        if (denom != 0.0) {
          const double t = (ex * (ay - sy) - ey * (ax - sx)) / denom;
          output.push_back({sx + t * dx, sy + t * dy});
        }
      }
      if (p_in) output.push_back({px, py_});
      sx = px;
      sy = py_;
      s_in = p_in;
    }
  }
  return dedupe(output);
}

double polygon_area(const std::vector<Pt>& poly) {
  const size_t n = poly.size();
  if (n < 3) return 0.0;
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Pt& p0 = poly[i];
    const Pt& p1 = poly[(i + 1) % n];
    total += p0.x * p1.y - p1.x * p0.y;
  }
  return std::fabs(total) * 0.5;
}

double riou(Box a, Box b) {
  if (box_equal(a, b)) return 1.0;
  if (box_less(b, a)) std::swap(a, b);
  Pt ca[4], cb[4];
  box_corners(a, ca);
  box_corners(b, cb);
  double amax_x = ca[0].x, amin_x = ca[0].x, amax_y = ca[0].y, amin_y = ca[0].y;
  double bmax_x = cb[0].x, bmin_x = cb[0].x, bmax_y = cb[0].y, bmin_y = cb[0].y;
  for (int i = 1; i < 4; ++i) {
    amax_x = std::max(amax_x, ca[i].x);
    amin_x = std::min(amin_x, ca[i].x);
    amax_y = std::max(amax_y, ca[i].y);
    amin_y = std::min(amin_y, ca[i].y);
    bmax_x = std::max(bmax_x, cb[i].x);
    bmin_x = std::min(bmin_x, cb[i].x);
    bmax_y = std::max(bmax_y, cb[i].y);
    bmin_y = std::min(bmin_y, cb[i].y);
  }
  if (amax_x < bmin_x || bmax_x < amin_x || amax_y < bmin_y || bmax_y < amin_y) return 0.0;
  const std::vector<Pt> subject(ca, ca + 4);
  const double inter = polygon_area(convex_clip(subject, cb));
  if (inter <= 0.0) return 0.0;
  const double uni = a.w * a.h + b.w * b.h - inter;
  if (uni <= 0.0) return 0.0;
  double out = inter / uni;
  if (out < 0.0) return 0.0;
  if (out > 1.0) return 1.0;
  return out;
}

std::vector<int64_t> nms(const std::vector<Box>& boxes, const std::vector<double>& scores, double threshold) {
  const size_t n = boxes.size();
  std::vector<int64_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<int64_t>(i);
  std::sort(order.begin(), order.end(), [&](int64_t i, int64_t j) {
    if (scores[i] != scores[j]) return scores[i] > scores[j];
    return i < j;
  });
  std::vector<int64_t> kept;
  for (int64_t i : order) {
    bool keep = true;
    for (int64_t j : kept) {
      if (riou(boxes[i], boxes[j]) > threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(i);
  }
  return kept;
}

struct Target {
  double tx, ty, tw, th, ttheta;
};

Target encode_one(const Box& gt, const Box& anchor) {
  return Target{
      (gt.cx - anchor.cx) / anchor.w,
      (gt.cy - anchor.cy) / anchor.h,
      std::log(gt.w / anchor.w),
      std::log(gt.h / anchor.h),
      gt.theta - anchor.theta,
  };
}

Box decode_one(const Target& t, const Box& anchor) {
  const double w = anchor.w * std::exp(t.tw);
  const double h = anchor.h * std::exp(t.th);
  if (!(w <= kMaxDecodeExtent) || !(h <= kMaxDecodeExtent)) {
    throw std::overflow_error("decoded extent beyond sane pixel range");
  }
  const double x = t.tx * anchor.w + anchor.cx;
  const double y = t.ty * anchor.h + anchor.cy;
  return canonicalize(x, y, w, h, anchor.theta + t.ttheta);
}

double smooth_l1(double x, double beta) {
  const double ax = std::fabs(x);
  if (ax < beta) return 0.5 * x * x / beta;
  return ax - 0.5 * beta;
}

double smooth_l1_grad(double x, double beta) {
  if (std::fabs(x) < beta) return x / beta;
  return std::copysign(1.0, x);
}

double focal(double p, int target, double alpha, double gamma) {
  p = std::min(std::max(p, kProbEps), 1.0 - kProbEps);
  if (target == 1) return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
  return -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

struct IouSmoothResult {
  double value;
  double grad[5];
};

IouSmoothResult iou_smooth_l1(const Target& v_pred, const Target& v_gt, const Box& anchor, double beta) {
  double residuals[5] = {
      v_pred.tx - v_gt.tx,
      v_pred.ty - v_gt.ty,
      v_pred.tw - v_gt.tw,
      v_pred.th - v_gt.th,
      (v_pred.ttheta - v_gt.ttheta) * kAngleScale,
  };
  double reg = 0.0;
  for (double r : residuals) reg += smooth_l1(r, beta);
  double u = riou(decode_one(v_pred, anchor), decode_one(v_gt, anchor));
  u = std::min(std::max(u, kIouClamp), 1.0);
  const double value = std::fabs(-std::log(u));
  IouSmoothResult out{};
  out.value = value;
  if (reg == 0.0) {
    if (value == 0.0) return out;
    throw std::domain_error("zero regression residual but IoU < 1");
  }
  const double scale = value / reg;
  for (int j = 0; j < 5; ++j) {
    double g = smooth_l1_grad(residuals[j], beta);
    if (j == 4) g *= kAngleScale;
    out.grad[j] = g * scale;
  }
  return out;
}

struct QuadPoly {
  Pt v[4];
};

double quad_signed_area(const QuadPoly& q) {
  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Pt& p0 = q.v[i];
    const Pt& p1 = q.v[(i + 1) % 4];
    total += p0.x * p1.y - p1.x * p0.y;
  }
  return 0.5 * total;
}

QuadPoly quad_canonical(const QuadPoly& q) {
  QuadPoly tmp = q;
  if (quad_signed_area(tmp) < 0.0) {
    std::swap(tmp.v[0], tmp.v[3]);
    std::swap(tmp.v[1], tmp.v[2]);
  }
  int start = 0;
  for (int i = 1; i < 4; ++i) {
    const Pt& a = tmp.v[i];
    const Pt& b = tmp.v[start];
    if (a.x < b.x || (a.x == b.x && a.y < b.y)) start = i;
  }
  QuadPoly out;
  for (int i = 0; i < 4; ++i) out.v[i] = tmp.v[(start + i) % 4];
  return out;
}

std::vector<int64_t> rasterize(const std::vector<QuadPoly>& quads, const std::vector<int64_t>& labels,
                               int64_t height, int64_t width, double stride) {
  std::vector<int64_t> out(static_cast<size_t>(height * width), 0);
  const size_t n = quads.size();
  std::vector<double> neg_abs_area(n);
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) {
    neg_abs_area[i] = -std::fabs(quad_signed_area(quads[i]));
    order[i] = i;
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t i, size_t j) { return neg_abs_area[i] < neg_abs_area[j]; });
  for (size_t idx : order) {
    const QuadPoly q = quad_canonical(quads[idx]);
    const int64_t label = labels[idx];
    for (int64_t i = 0; i < height; ++i) {
      const double gy = (static_cast<double>(i) + 0.5) * stride;
      for (int64_t j = 0; j < width; ++j) {
        const double gx = (static_cast<double>(j) + 0.5) * stride;
        bool inside = true;
        for (int k = 0; k < 4; ++k) {
          const double ax = q.v[k].x, ay = q.v[k].y;
          const double bx = q.v[(k + 1) % 4].x, by = q.v[(k + 1) % 4].y;
          if (!((bx - ax) * (gy - ay) - (by - ay) * (gx - ax) >= -kClipEps)) {
            inside = false;
            break;
          }
        }
        if (inside) out[static_cast<size_t>(i * width + j)] = label;
      }
    }
  }
  return out;
}

// ---- NumPy plumbing ----

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<Box> boxes_from(const DArray& arr, const char* what) {
  const auto buf = arr.request();
  if (buf.ndim != 2 || buf.shape[1] != 5) {
    throw std::invalid_argument(std::string(what) + ": expected an (N, 5) array");
  }
  const double* p = static_cast<const double*>(buf.ptr);
  std::vector<Box> out(static_cast<size_t>(buf.shape[0]));
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = Box{p[i * 5 + 0], p[i * 5 + 1], p[i * 5 + 2], p[i * 5 + 3], p[i * 5 + 4]};
    validate_box(out[i], what);
  }
  return out;
}

std::vector<Target> targets_from(const DArray& arr, const char* what) {
  const auto buf = arr.request();
  if (buf.ndim != 2 || buf.shape[1] != 5) {
    throw std::invalid_argument(std::string(what) + ": expected an (N, 5) array");
  }
  const double* p = static_cast<const double*>(buf.ptr);
  std::vector<Target> out(static_cast<size_t>(buf.shape[0]));
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = Target{p[i * 5 + 0], p[i * 5 + 1], p[i * 5 + 2], p[i * 5 + 3], p[i * 5 + 4]};
    for (double v : {out[i].tx, out[i].ty, out[i].tw, out[i].th, out[i].ttheta}) {
      if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite target");
    }
  }
  return out;
}

py::array_t<double> batched_riou(DArray a, DArray b) {
  const auto boxes_a = boxes_from(a, "a");
  const auto boxes_b = boxes_from(b, "b");
  const size_t n = boxes_a.size(), m = boxes_b.size();
  std::vector<double> result(n * m);
  {
    py::gil_scoped_release release;
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < m; ++j) {
        result[i * m + j] = riou(boxes_a[i], boxes_b[j]);
      }
    }
  }
  py::array_t<double> out({static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(m)});
  std::copy(result.begin(), result.end(), out.mutable_data());
  return out;
}

py::array_t<int64_t> batched_rnms(DArray boxes, DArray scores, double threshold) {
  const auto bs = boxes_from(boxes, "boxes");
  const auto sbuf = scores.request();
  if (sbuf.ndim != 1) throw std::invalid_argument("scores: expected a 1-d array");
  const double* sp = static_cast<const double*>(sbuf.ptr);
  std::vector<double> sc(sp, sp + sbuf.shape[0]);
  if (sc.size() != bs.size()) {
    throw std::invalid_argument("boxes and scores length mismatch");
  }
  for (double s : sc) {
    if (!std::isfinite(s)) throw std::invalid_argument("non-finite score");
  }
  std::vector<int64_t> kept;
  {
    py::gil_scoped_release release;
    kept = nms(bs, sc, threshold);
  }
  py::array_t<int64_t> out(static_cast<py::ssize_t>(kept.size()));
  std::copy(kept.begin(), kept.end(), out.mutable_data());
  return out;
}

py::array_t<double> batched_encode(DArray gt, DArray anchors) {
  const auto gts = boxes_from(gt, "gt");
  const auto as = boxes_from(anchors, "anchors");
  if (gts.size() != as.size()) throw std::invalid_argument("gt and anchors length mismatch");
  std::vector<double> result(gts.size() * 5);
  {
    py::gil_scoped_release release;
    for (size_t i = 0; i < gts.size(); ++i) {
      const Target t = encode_one(gts[i], as[i]);
      result[i * 5 + 0] = t.tx;
      result[i * 5 + 1] = t.ty;
      result[i * 5 + 2] = t.tw;
      result[i * 5 + 3] = t.th;
      result[i * 5 + 4] = t.ttheta;
    }
  }
  py::array_t<double> out({static_cast<py::ssize_t>(gts.size()), static_cast<py::ssize_t>(5)});
  std::copy(result.begin(), result.end(), out.mutable_data());
  return out;
}

py::array_t<double> batched_decode(DArray targets, DArray anchors) {
  const auto ts = targets_from(targets, "targets");
  const auto as = boxes_from(anchors, "anchors");
  if (ts.size() != as.size()) throw std::invalid_argument("targets and anchors length mismatch");
  std::vector<double> result(ts.size() * 5);
  {
    py::gil_scoped_release release;
    for (size_t i = 0; i < ts.size(); ++i) {
      const Box b = decode_one(ts[i], as[i]);
      result[i * 5 + 0] = b.cx;
      result[i * 5 + 1] = b.cy;
      result[i * 5 + 2] = b.w;
      result[i * 5 + 3] = b.h;
      result[i * 5 + 4] = b.theta;
    }
  }
  py::array_t<double> out({static_cast<py::ssize_t>(ts.size()), static_cast<py::ssize_t>(5)});
  std::copy(result.begin(), result.end(), out.mutable_data());
  return out;
}

py::array_t<double> batched_smooth_l1(DArray x, DArray beta) {
  const auto xb = x.request();
  const auto bb = beta.request();
  if (xb.ndim != 1 || bb.ndim != 1 || xb.shape[0] != bb.shape[0]) {
    throw std::invalid_argument("x and beta must be equal-length 1-d arrays");
  }
  const double* xp = static_cast<const double*>(xb.ptr);
  const double* bp = static_cast<const double*>(bb.ptr);
  const size_t n = static_cast<size_t>(xb.shape[0]);
  std::vector<double> result(n);
  {
    py::gil_scoped_release release;
    for (size_t i = 0; i < n; ++i) result[i] = smooth_l1(xp[i], bp[i]);
  }
  py::array_t<double> out(static_cast<py::ssize_t>(n));
  std::copy(result.begin(), result.end(), out.mutable_data());
  return out;
}

py::array_t<double> batched_focal(DArray p, py::array_t<int64_t, py::array::c_style | py::array::forcecast> target,
                                  DArray alpha, DArray gamma) {
  const auto pb = p.request();
  const auto tb = target.request();
  const auto ab = alpha.request();
  const auto gb = gamma.request();
  if (pb.ndim != 1 || tb.shape[0] != pb.shape[0] || ab.shape[0] != pb.shape[0] || gb.shape[0] != pb.shape[0]) {
    throw std::invalid_argument("focal inputs must be equal-length 1-d arrays");
  }
  const double* pp = static_cast<const double*>(pb.ptr);
  const int64_t* tp = static_cast<const int64_t*>(tb.ptr);
  const double* ap = static_cast<const double*>(ab.ptr);
  const double* gp = static_cast<const double*>(gb.ptr);
  const size_t n = static_cast<size_t>(pb.shape[0]);
  for (size_t i = 0; i < n; ++i) {
    if (tp[i] != 0 && tp[i] != 1) throw std::invalid_argument("focal target must be 0 or 1");
  }
  std::vector<double> result(n);
  {
    py::gil_scoped_release release;
    for (size_t i = 0; i < n; ++i) result[i] = focal(pp[i], static_cast<int>(tp[i]), ap[i], gp[i]);
  }
  py::array_t<double> out(static_cast<py::ssize_t>(n));
  std::copy(result.begin(), result.end(), out.mutable_data());
  return out;
}

py::tuple batched_iou_smooth_l1(DArray v_pred, DArray v_gt, DArray anchors, double beta) {
  const auto preds = targets_from(v_pred, "v_pred");
  const auto gts = targets_from(v_gt, "v_gt");
  const auto as = boxes_from(anchors, "anchors");
  if (preds.size() != gts.size() || preds.size() != as.size()) {
    throw std::invalid_argument("v_pred, v_gt and anchors must have equal lengths");
  }
  const size_t n = preds.size();
  std::vector<double> values(n);
  std::vector<double> grads(n * 5);
  {
    py::gil_scoped_release release;
    for (size_t i = 0; i < n; ++i) {
      const IouSmoothResult r = iou_smooth_l1(preds[i], gts[i], as[i], beta);
      values[i] = r.value;
      for (int j = 0; j < 5; ++j) grads[i * 5 + j] = r.grad[j];
    }
  }
  py::array_t<double> vout(static_cast<py::ssize_t>(n));
  std::copy(values.begin(), values.end(), vout.mutable_data());
  py::array_t<double> gout({static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(5)});
  std::copy(grads.begin(), grads.end(), gout.mutable_data());
  return py::make_tuple(vout, gout);
}

py::array_t<int64_t> rasterize_masks(DArray quads, py::array_t<int64_t, py::array::c_style | py::array::forcecast> labels,
                                     int64_t height, int64_t width, double stride) {
  const auto qb = quads.request();
  const auto lb = labels.request();
  if (qb.ndim != 3 || qb.shape[1] != 4 || qb.shape[2] != 2) {
    throw std::invalid_argument("quads: expected a (K, 4, 2) array");
  }
  if (lb.ndim != 1 || lb.shape[0] != qb.shape[0]) {
    throw std::invalid_argument("labels: expected (K,) matching quads");
  }
  if (height < 1 || width < 1) throw std::invalid_argument("canvas must be at least 1x1");
  const double* qp = static_cast<const double*>(qb.ptr);
  const int64_t* lp = static_cast<const int64_t*>(lb.ptr);
  const size_t k = static_cast<size_t>(qb.shape[0]);
  std::vector<QuadPoly> qs(k);
  std::vector<int64_t> ls(lp, lp + k);
  for (size_t i = 0; i < k; ++i) {
    for (int v = 0; v < 4; ++v) {
      qs[i].v[v] = Pt{qp[i * 8 + v * 2], qp[i * 8 + v * 2 + 1]};
    }
    if (ls[i] < 1) throw std::invalid_argument("labels must be >= 1");
  }
  std::vector<int64_t> result;
  {
    py::gil_scoped_release release;
    result = rasterize(qs, ls, height, width, stride);
  }
  py::array_t<int64_t> out({static_cast<py::ssize_t>(height), static_cast<py::ssize_t>(width)});
  std::copy(result.begin(), result.end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Batched rotated-box kernels (bit-for-bit with the reference implementation)";
  m.def("batched_riou", &batched_riou, py::arg("a"), py::arg("b"),
        "Pairwise rotated IoU: (N, 5) x (M, 5) -> (N, M)");
  m.def("batched_rnms", &batched_rnms, py::arg("boxes"), py::arg("scores"), py::arg("threshold"),
        "Greedy rotated NMS; returns kept indices in descending score order");
  m.def("encode", &batched_encode, py::arg("gt"), py::arg("anchors"),
        "Box -> offset regression targets, row by row");
  m.def("decode", &batched_decode, py::arg("targets"), py::arg("anchors"),
        "Offsets -> canonical boxes, row by row");
  m.def("smooth_l1", &batched_smooth_l1, py::arg("x"), py::arg("beta"));
  m.def("focal_loss", &batched_focal, py::arg("p"), py::arg("target"), py::arg("alpha"), py::arg("gamma"));
  m.def("iou_smooth_l1", &batched_iou_smooth_l1, py::arg("v_pred"), py::arg("v_gt"), py::arg("anchors"),
        py::arg("beta") = 1.0, "Returns (values, gradients) for rotated regression rows");
  m.def("rasterize_masks", &rasterize_masks, py::arg("quads"), py::arg("labels"), py::arg("height"),
        py::arg("width"), py::arg("stride") = 1.0,
        "Label-map rasterization; smaller quads win overlaps");
}
