#include "divopt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "divopt/errors.hpp"

namespace divopt {

namespace {

constexpr std::size_t kDensityPoints = 512;

int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Prediction classify(const ProbPair& pair, double delta) {
  Prediction p;
  p.l_crs = crs_ent(pair).crs;
  p.head1 = argmax(pair.p1);
  p.head2 = argmax(pair.p2);
  if (reject_unknown(p.l_crs, delta)) return p;
  std::vector<double> avg(pair.p1.size());
  for (std::size_t k = 0; k < avg.size(); ++k) avg[k] = 0.5 * (pair.p1[k] + pair.p2[k]);
  p.label = argmax(avg);
  return p;
}

std::vector<Prediction> predict(const TwoHeadModel& model, const Tensor2D& x, double delta) {
  const ForwardPass pass = forward(model, x);
  std::vector<Prediction> out;
  out.reserve(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out.push_back(classify({pass.p1.row(r), pass.p2.row(r)}, delta));
  return out;
}

double scott_bandwidth(std::span<const double> values) {
  if (values.size() < 2) throw NumericError("density estimate needs at least 2 values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 0.0)) throw NumericError("density estimate of zero-variance values; add jitter to the inputs");
  return sd * std::pow(n, -0.2);
}

std::vector<double> divergence_density(std::span<const double> values, std::span<const double> grid) {
  const double h = scott_bandwidth(values);
  const double norm = 1.0 / (static_cast<double>(values.size()) * h * std::sqrt(2.0 * std::numbers::pi));
  std::vector<double> pdf(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double acc = 0.0;
    for (double v : values) {
      const double u = (grid[g] - v) / h;
      acc += std::exp(-0.5 * u * u);
    }
    pdf[g] = norm * acc;
  }
  return pdf;
}

double density_mode(std::span<const double> grid, std::span<const double> pdf) {
  if (grid.empty() || grid.size() != pdf.size()) throw DimensionError("density grid/pdf mismatch");
  return grid[static_cast<std::size_t>(argmax(pdf))];
}

EvalReport evaluate(const TwoHeadModel& model, const DomainDataset& target, double delta) {
  if (target.true_labels.size() != target.size()) throw DataError("target lacks ground-truth labels");
  EvalReport report;
  report.delta = delta;
  const auto preds = predict(model, target.features, delta);

  const std::size_t total_classes = target.class_roles.size();
  std::vector<std::size_t> support(total_classes, 0), hits(total_classes, 0);
  std::size_t private_support = 0, private_hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int truth = target.true_labels[i];
    if (truth < 0 || static_cast<std::size_t>(truth) >= total_classes) {
      throw DataError("target label " + std::to_string(truth) + " has no class role");
    }
    const auto t = static_cast<std::size_t>(truth);
    if (target.class_roles[t] == ClassRole::TargetPrivate) {
      ++private_support;
      if (preds[i].label == kUnknownLabel) ++private_hits;
      report.private_divergences.push_back(preds[i].l_crs);
    } else {
      ++support[t];
      if (preds[i].label == truth) ++hits[t];
      report.common_divergences.push_back(preds[i].l_crs);
    }
  }

  double common_sum = 0.0;
  std::size_t common_classes = 0;
  for (std::size_t c = 0; c < total_classes; ++c) {
    if (target.class_roles[c] != ClassRole::Common) continue;
    if (support[c] == 0) {
      report.warnings.push_back("common class " + std::to_string(c) + " has no target samples");
      continue;
    }
    const double recall = static_cast<double>(hits[c]) / static_cast<double>(support[c]);
    report.per_class.push_back({static_cast<int>(c), ClassRole::Common, support[c], recall});
    common_sum += recall;
    ++common_classes;
  }
  report.common_accuracy = common_classes ? common_sum / static_cast<double>(common_classes) : 0.0;

  if (private_support > 0) {
    report.has_unknown = true;
    report.unknown_recall = static_cast<double>(private_hits) / static_cast<double>(private_support);
    report.per_class.push_back({kUnknownLabel, ClassRole::TargetPrivate, private_support, report.unknown_recall});
  } else {
    report.warnings.emplace_back("target has no private samples; averaging over |C| classes");
  }
  double sum = 0.0;
  for (const auto& c : report.per_class) sum += c.recall;
  report.average_accuracy = report.per_class.empty() ? 0.0 : sum / static_cast<double>(report.per_class.size());

  // Density curves on a shared grid spanning both populations.
  auto bandwidth_or_zero = [&](const std::vector<double>& v, const char* name) {
    try {
      return scott_bandwidth(v);
    } catch (const NumericError& e) {
      if (!v.empty()) report.warnings.push_back(std::string(name) + " density skipped: " + e.what());
      return 0.0;
    }
  };
  DensityCurves& d = report.density;
  d.common_bandwidth = bandwidth_or_zero(report.common_divergences, "common");
  d.private_bandwidth = bandwidth_or_zero(report.private_divergences, "private");
  if (d.common_bandwidth > 0.0 || d.private_bandwidth > 0.0) {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto* v : {&report.common_divergences, &report.private_divergences}) {
      for (double x : *v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
    }
    const double pad = 5.0 * std::max(d.common_bandwidth, d.private_bandwidth);
    lo -= pad;
    hi += pad;
    d.grid.resize(kDensityPoints);
    for (std::size_t i = 0; i < kDensityPoints; ++i) {
      d.grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(kDensityPoints - 1);
    }
    d.common_pdf = d.common_bandwidth > 0.0 ? divergence_density(report.common_divergences, d.grid)
                                            : std::vector<double>(kDensityPoints, 0.0);
    d.private_pdf = d.private_bandwidth > 0.0 ? divergence_density(report.private_divergences, d.grid)
                                              : std::vector<double>(kDensityPoints, 0.0);
  }
  return report;
}

std::string report_csv(const EvalReport& report) {
  std::string out = "class,role,recall\n";
  for (const auto& c : report.per_class) {
    out += (c.class_id == kUnknownLabel ? std::string("unknown") : std::to_string(c.class_id)) + "," +
           std::string(to_string(c.role)) + "," + fmt(c.recall) + "\n";
  }
  out += "average,summary," + fmt(report.average_accuracy) + "\n";
  return out;
}

std::string density_csv(const EvalReport& report) {
  std::string out = "x,pdf_common,pdf_private\n";
  const auto& d = report.density;
  for (std::size_t i = 0; i < d.grid.size(); ++i) {
    out += fmt(d.grid[i]) + "," + fmt(d.common_pdf[i]) + "," + fmt(d.private_pdf[i]) + "\n";
  }
  return out;
}

BoundaryGrid boundary_grid(const TwoHeadModel& model, const GridBounds& bounds,
                           std::size_t resolution, double delta) {
  if (model.input_width != 2) throw DimensionError("boundary grids need a model with 2-D input");
  if (resolution == 0) throw ConfigError("grid resolution must be positive");
  if (!(bounds.x_max > bounds.x_min && bounds.y_max > bounds.y_min)) throw ConfigError("empty grid bounds");
  BoundaryGrid grid;
  grid.bounds = bounds;
  grid.resolution = resolution;
  grid.delta = delta;
  const double dx = (bounds.x_max - bounds.x_min) / static_cast<double>(resolution);
  const double dy = (bounds.y_max - bounds.y_min) / static_cast<double>(resolution);
  for (std::size_t i = 0; i < resolution; ++i) {
    grid.xs.push_back(bounds.x_min + (static_cast<double>(i) + 0.5) * dx);
    grid.ys.push_back(bounds.y_min + (static_cast<double>(i) + 0.5) * dy);
  }
  const std::size_t n = resolution * resolution;
  grid.pred1.reserve(n);
  grid.pred2.reserve(n);
  grid.l_crs.reserve(n);
  grid.unknown.reserve(n);
  // One row of cells per forward pass keeps memory flat.
  for (std::size_t iy = 0; iy < resolution; ++iy) {
    Tensor2D x(resolution, 2);
    for (std::size_t ix = 0; ix < resolution; ++ix) {
      x(ix, 0) = grid.xs[ix];
      x(ix, 1) = grid.ys[iy];
    }
    for (const Prediction& p : predict(model, x, delta)) {
      grid.pred1.push_back(p.head1);
      grid.pred2.push_back(p.head2);
      grid.l_crs.push_back(p.l_crs);
      grid.unknown.push_back(p.label == kUnknownLabel);
    }
  }
  return grid;
}

std::string boundary_csv(const BoundaryGrid& grid) {
  std::string out = "x,y,pred1,pred2,l_crs,unknown\n";
  for (std::size_t iy = 0; iy < grid.resolution; ++iy) {
    for (std::size_t ix = 0; ix < grid.resolution; ++ix) {
      const std::size_t c = iy * grid.resolution + ix;
      out += fmt(grid.xs[ix]) + "," + fmt(grid.ys[iy]) + "," + std::to_string(grid.pred1[c]) + "," +
             std::to_string(grid.pred2[c]) + "," + fmt(grid.l_crs[c]) + "," + (grid.unknown[c] ? "1" : "0") +
             "\n";
    }
  }
  return out;
}

namespace {

// Region tints and point colours: red, blue, orange, then extras.
constexpr const char* kRegionFill[] = {"#f9c6cf", "#c6dcf9", "#fbf0c0", "#d2f2d0", "#e3d3f2", "#f2dccb"};
constexpr const char* kPointFill[] = {"#d62728", "#1f77b4", "#ff9f1c", "#2ca02c", "#9467bd", "#8c564b"};
constexpr const char* kUnknownFill = "#bdbdbd";
constexpr double kCanvasWidth = 640.0;

const char* cycle(const char* const* palette, std::size_t size, int k) {
  return palette[static_cast<std::size_t>(k) % size];
}

}  // namespace

std::string boundary_svg(const BoundaryGrid& grid, const DomainDataset* source,
                         const DomainDataset* target) {
  const GridBounds& b = grid.bounds;
  const double width = kCanvasWidth;
  const double height = kCanvasWidth * (b.y_max - b.y_min) / (b.x_max - b.x_min);
  const double sx = width / (b.x_max - b.x_min);
  const double sy = height / (b.y_max - b.y_min);
  auto px = [&](double x) { return (x - b.x_min) * sx; };
  auto py = [&](double y) { return height - (y - b.y_min) * sy; };
  const double cw = width / static_cast<double>(grid.resolution);
  const double ch = height / static_cast<double>(grid.resolution);
  const std::size_t n_fill = std::size(kRegionFill);

  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "viewBox=\"0 0 %.3f %.3f\">\n",
                width, height, width, height);
  out += buf;
  out += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n<g shape-rendering=\"crispEdges\">\n";

  auto cell_fill = [&](std::size_t c) -> const char* {
    if (grid.unknown[c]) return kUnknownFill;
    if (grid.pred1[c] == grid.pred2[c]) return cycle(kRegionFill, n_fill, grid.pred1[c]);
    return nullptr;
  };
  // Run-length encode each row of cells into one rect per colour run.
  for (std::size_t iy = 0; iy < grid.resolution; ++iy) {
    std::size_t ix = 0;
    while (ix < grid.resolution) {
      const char* fill = cell_fill(iy * grid.resolution + ix);
      std::size_t end = ix + 1;
      while (end < grid.resolution && cell_fill(iy * grid.resolution + end) == fill) ++end;
      if (fill != nullptr) {
        std::snprintf(buf, sizeof(buf), "<rect x=\"%.3f\" y=\"%.3f\" width=\"%.3f\" height=\"%.3f\" fill=\"%s\"/>\n",
                      static_cast<double>(ix) * cw, height - static_cast<double>(iy + 1) * ch,
                      static_cast<double>(end - ix) * cw, ch, fill);
        out += buf;
      }
      ix = end;
    }
  }
  out += "</g>\n";

  // Each head's boundary around class 0, drawn on cell edges.
  auto boundary_path = [&](const std::vector<int>& pred) {
    std::string d;
    auto inside = [&](std::size_t ix, std::size_t iy) { return pred[iy * grid.resolution + ix] == 0; };
    for (std::size_t iy = 0; iy < grid.resolution; ++iy) {
      for (std::size_t ix = 0; ix < grid.resolution; ++ix) {
        const double x0 = static_cast<double>(ix) * cw;
        const double y0 = height - static_cast<double>(iy + 1) * ch;
        if (ix + 1 < grid.resolution && inside(ix, iy) != inside(ix + 1, iy)) {
          std::snprintf(buf, sizeof(buf), "M%.2f %.2fv%.2f", x0 + cw, y0, ch);
          d += buf;
        }
        if (iy + 1 < grid.resolution && inside(ix, iy) != inside(ix, iy + 1)) {
          std::snprintf(buf, sizeof(buf), "M%.2f %.2fh%.2f", x0, y0, cw);
          d += buf;
        }
      }
    }
    return d;
  };
  const std::string path1 = boundary_path(grid.pred1);
  const std::string path2 = boundary_path(grid.pred2);
  if (!path1.empty()) {
    out += "<path fill=\"none\" stroke=\"#333333\" stroke-width=\"1.5\" d=\"" + path1 + "\"/>\n";
  }
  if (!path2.empty()) {
    out += "<path fill=\"none\" stroke=\"#333333\" stroke-width=\"1.5\" stroke-dasharray=\"4 3\" d=\"" +
           path2 + "\"/>\n";
  }

  auto scatter = [&](const DomainDataset& ds, bool is_source) {
    if (ds.features.cols() < 2) return;
    out += "<g stroke-width=\"0.6\">\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const double x = ds.features(i, 0);
      const double y = ds.features(i, 1);
      if (x < b.x_min || x > b.x_max || y < b.y_min || y > b.y_max) continue;
      const char* fill = is_source ? cycle(kPointFill, std::size(kPointFill), ds.observed_labels[i]) : "#ffffff";
      std::snprintf(buf, sizeof(buf), "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.2\" fill=\"%s\" stroke=\"%s\"/>\n",
                    px(x), py(y), fill, is_source ? "#222222" : "#555555");
      out += buf;
    }
    out += "</g>\n";
  };
  if (source != nullptr) scatter(*source, true);
  if (target != nullptr) scatter(*target, false);
  out += "</svg>\n";
  return out;
}

}  // namespace divopt
