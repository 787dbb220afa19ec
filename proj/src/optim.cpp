#include "dtts/optim.hpp"

#include "dtts/errors.hpp"

#include <algorithm>
#include <cmath>

namespace dtts {

double LrSchedule::peak() const { return base_lr / std::sqrt(static_cast<double>(dim)); }

double LrSchedule::at(long step) const {
  const double s = static_cast<double>(std::max(step, 1L));
  const double w = static_cast<double>(std::max(warmup, 1));
  return peak() * std::min(s / w, std::sqrt(w / s));
}

Adam::Adam(const std::vector<NamedParameter>& params, AdamConfig config)
    : params_(params), config_(config) {
  reset();
}

void Adam::reset() {
  m_.clear();
  v_.clear();
  for (const auto& p : params_) {
    m_.push_back(Matrix::Zero(p.rows, p.cols));
    v_.push_back(Matrix::Zero(p.rows, p.cols));
  }
  steps_ = 0;
}

void Adam::step(double lr) {
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var var = params_[i].var;
    const Matrix& g = var.grad();
    if (g.size() == 0) continue;
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g.cwiseProduct(g);
    var.mutable_value().array() -=
        lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.eps);
  }
}

std::map<std::string, const Matrix*> Adam::state() const {
  std::map<std::string, const Matrix*> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out["adam.m/" + params_[i].name] = &m_[i];
    out["adam.v/" + params_[i].name] = &v_[i];
  }
  return out;
}

void Adam::load_state(const std::map<std::string, Matrix>& tensors, long steps) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    for (auto [key, dst] : {std::pair{"adam.m/", &m_[i]}, std::pair{"adam.v/", &v_[i]}}) {
      const auto it = tensors.find(key + params_[i].name);
      if (it == tensors.end()) throw DataError("checkpoint lacks optimizer state " + std::string(key) + params_[i].name);
      if (it->second.rows() != dst->rows() || it->second.cols() != dst->cols()) {
        throw DataError("optimizer state shape mismatch for " + params_[i].name);
      }
      *dst = it->second;
    }
  }
  steps_ = steps;
}

double clip_grad_norm(const std::vector<NamedParameter>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.var.grad().size() != 0) sq += p.var.grad().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm && max_norm > 0.0) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      Var v = p.var;
      if (v.grad().size() != 0) v.mutable_grad() *= s;
    }
  }
  return norm;
}

}  // namespace dtts
