#include "uavsearch/estimation.hpp"

#include <sstream>

namespace uavsearch {

namespace {

LocalChannelModel solve_ls(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, const Vec3& c0) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < 4) {
    // Name the deficient direction from the smallest singular vector of the
    // centered part so the caller can see which axis lacks excitation.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(design.rightCols(3), Eigen::ComputeThinV);
    Eigen::Vector3d v = svd.matrixV().col(2);
    std::ostringstream msg;
    msg << "fit_local_model: degenerate measurement geometry, no excitation along ["
        << v.transpose() << "]";
    throw DegenerateGeometryError(msg.str());
  }
  const Eigen::VectorXd theta = qr.solve(y);
  LocalChannelModel model;
  model.anchor = c0;
  model.alpha_db = theta(0);
  model.beta_db_per_m = theta.segment<3>(1);
  model.n_used = static_cast<int>(y.size());
  const double rss = (design * theta - y).squaredNorm();
  model.fit_residual_db = std::sqrt(rss / static_cast<double>(y.size()));
  const Eigen::Matrix4d covariance = (design.transpose() * design).inverse();
  model.alpha_std_unit = std::sqrt(std::max(0.0, covariance(0, 0)));
  model.beta_std_unit =
      std::sqrt(std::max(0.0, covariance(1, 1) + covariance(2, 2) + covariance(3, 3)));
  return model;
}

}  // namespace

LocalChannelModel fit_local_model(const std::vector<Vec3>& points, const std::vector<double>& values,
                                  const Vec3& c0) {
  if (points.size() != values.size()) {
    throw std::invalid_argument("fit_local_model: points/values size mismatch");
  }
  const int n = static_cast<int>(points.size());
  if (n < 5) throw DegenerateGeometryError("fit_local_model: needs at least 5 measurements");
  Eigen::MatrixXd design(n, 4);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    design.row(i).tail(3) = (points[static_cast<std::size_t>(i)] - c0).transpose();
    y(i) = values[static_cast<std::size_t>(i)];
  }
  return solve_ls(design, y, c0);
}

LocalChannelModel fit_local_model(const MeasurementBuffer& buffer, const Vec3& c0) {
  std::vector<Vec3> points;
  std::vector<double> values;
  points.reserve(static_cast<std::size_t>(buffer.size()));
  values.reserve(static_cast<std::size_t>(buffer.size()));
  for (const Measurement& m : buffer.entries()) {
    points.push_back(m.position);
    values.push_back(m.y_db);
  }
  return fit_local_model(points, values, c0);
}

double variance_lower_bound(int m, double r1, double sigma) {
  const double md = static_cast<double>(m);
  return sigma * sigma / md + 9.0 * sigma * sigma / (md * r1 * r1);
}

PatternReport check_pattern_conditions(const std::vector<Vec3>& points, const Vec3& c0, double r1) {
  if (points.empty()) throw std::invalid_argument("check_pattern_conditions: no points");
  const double md = static_cast<double>(points.size());
  Vec3 first = Vec3::Zero();
  Eigen::Matrix3d second = Eigen::Matrix3d::Zero();
  for (const Vec3& p : points) {
    const Vec3 d = p - c0;
    first += d;
    second += d * d.transpose();
  }
  const double norm = md * r1 * r1;
  PatternReport report;
  report.cond_i = first.cwiseAbs().maxCoeff() / norm;
  double cross = 0.0;
  for (int j = 0; j < 3; ++j) {
    for (int jp = j + 1; jp < 3; ++jp) cross = std::max(cross, std::abs(second(j, jp)));
  }
  report.cond_ii = cross / norm;
  double diag = 0.0;
  for (int j = 0; j < 3; ++j) diag = std::max(diag, std::abs(second(j, j) - norm / 3.0));
  report.cond_iii = diag / norm;
  return report;
}

double mse_bound(int m, double r0, double r1, double sigma, double lg) {
  const double md = static_cast<double>(m);
  const double var = sigma * sigma / md * (1.0 + 3.0 * r0 * r0 / (r1 * r1));
  const double bias = r1 * r1 + 3.0 * r0 * r1 + r0 * r0;
  return var + lg * lg / 4.0 * bias * bias;
}

double mse_approx(int m, double r0, double r1, double sigma, double lg2) {
  const double md = static_cast<double>(m);
  const double var = sigma * sigma / md * (1.0 + 3.0 * r0 * r0 / (r1 * r1));
  const double bias = r1 * r1 + r0 * r0;
  return var + lg2 * lg2 / 4.0 * bias * bias;
}

double optimal_measurement_radius(int m, double r0, double sigma, double lg2) {
  double lo = 0.1, hi = 200.0;
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - gr * (hi - lo);
  double d = lo + gr * (hi - lo);
  double fc = mse_approx(m, r0, c, sigma, lg2);
  double fd = mse_approx(m, r0, d, sigma, lg2);
  while (hi - lo > 0.01) {
    if (fc < fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - gr * (hi - lo);
      fc = mse_approx(m, r0, c, sigma, lg2);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + gr * (hi - lo);
      fd = mse_approx(m, r0, d, sigma, lg2);
    }
  }
  return 0.5 * (lo + hi);
}

Vec3 alternating_spiral_sample(int m, int big_m, double r1, int k) {
  const double md = static_cast<double>(big_m);
  const double omega = 4.0 * k * M_PI / md;
  const double v = 2.0 / std::sqrt(md * md - 1.0);
  const double t = static_cast<double>(m) - 0.5;
  const double scale = std::sqrt(2.0 / 3.0) * r1;
  const double flip = (static_cast<long>(std::floor(omega * t / (2.0 * M_PI))) % 2 == 0) ? 1.0 : -1.0;
  return Vec3(scale * std::cos(omega * t), v * r1 * (t - md / 2.0), scale * std::sin(omega * t) * flip);
}

}  // namespace uavsearch
