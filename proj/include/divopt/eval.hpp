#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "divopt/losses.hpp"
#include "divopt/nn.hpp"
#include "divopt/synth.hpp"

namespace divopt {

/// Label assigned to samples rejected as target-private.
inline constexpr int kUnknownLabel = -1;

struct Prediction {
  int label = kUnknownLabel;  // class id or kUnknownLabel
  int head1 = 0;              // argmax of F1
  int head2 = 0;              // argmax of F2
  double l_crs = 0.0;
};

/// Unknown when l_crs > delta, otherwise argmax of (p1 + p2) / 2 with ties to
/// the lower index.
Prediction classify(const ProbPair& pair, double delta);

std::vector<Prediction> predict(const TwoHeadModel& model, const Tensor2D& x, double delta);

struct ClassRecall {
  int class_id = kUnknownLabel;  // kUnknownLabel for the unified unknown class
  ClassRole role = ClassRole::Common;
  std::size_t support = 0;
  double recall = 0.0;
};

struct DensityCurves {
  std::vector<double> grid;
  std::vector<double> common_pdf;
  std::vector<double> private_pdf;
  double common_bandwidth = 0.0;
  double private_bandwidth = 0.0;
};

struct EvalReport {
  std::vector<ClassRecall> per_class;  // common classes, then unknown
  double average_accuracy = 0.0;       // unweighted mean of per_class recalls
  double common_accuracy = 0.0;        // mean over the common classes only
  double unknown_recall = 0.0;
  bool has_unknown = false;
  double delta = 0.0;
  std::vector<double> common_divergences;
  std::vector<double> private_divergences;
  DensityCurves density;
  std::vector<std::string> warnings;
};

/// Per-class recall over the common classes plus one unified unknown class.
/// Targets without private samples fall back to |C| classes with a warning.
EvalReport evaluate(const TwoHeadModel& model, const DomainDataset& target, double delta);

/// Scott's rule for one dimension: sample stddev * n^(-1/5).
double scott_bandwidth(std::span<const double> values);

/// Gaussian KDE with Scott's bandwidth, evaluated at `grid`. Throws
/// NumericError for fewer than 2 values or zero variance.
std::vector<double> divergence_density(std::span<const double> values, std::span<const double> grid);

/// Grid point with the largest density.
double density_mode(std::span<const double> grid, std::span<const double> pdf);

std::string report_csv(const EvalReport& report);
/// CSV `x,pdf_common,pdf_private`.
std::string density_csv(const EvalReport& report);

struct GridBounds {
  double x_min = -10.0;
  double x_max = 14.0;
  double y_min = -12.0;
  double y_max = 10.0;
  bool operator==(const GridBounds&) const = default;
};

/// Predictions on a resolution x resolution lattice of cell centres,
/// stored row-major with y increasing by row.
struct BoundaryGrid {
  GridBounds bounds;
  std::size_t resolution = 0;
  double delta = 0.0;
  std::vector<double> xs;
  std::vector<double> ys;
  std::vector<int> pred1;
  std::vector<int> pred2;
  std::vector<double> l_crs;
  std::vector<bool> unknown;

  std::size_t cells() const { return pred1.size(); }
};

BoundaryGrid boundary_grid(const TwoHeadModel& model, const GridBounds& bounds,
                           std::size_t resolution, double delta);

/// CSV `x,y,pred1,pred2,l_crs,unknown`.
std::string boundary_csv(const BoundaryGrid& grid);

/// Self-contained SVG: regions tinted by the class both heads agree on, gray
/// where rejected, white where the heads disagree; each head's boundary
/// around class 0 (solid F1, dashed F2); source points coloured by observed
/// label and target points in white.
std::string boundary_svg(const BoundaryGrid& grid, const DomainDataset* source,
                         const DomainDataset* target);

}  // namespace divopt
