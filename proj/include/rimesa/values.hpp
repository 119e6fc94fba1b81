#pragma once

#include <map>
#include <stdexcept>
#include <variant>

#include <Eigen/Core>

#include "rimesa/key.hpp"
#include "rimesa/manifold.hpp"

namespace rimesa {

// A pose or a Euclidean point (landmark).
template <int D>
using Variable = std::variant<Pose<D>, Eigen::VectorXd>;

template <int D>
int variable_dof(const Variable<D>& v) {
  if (std::holds_alternative<Pose<D>>(v)) return kPoseDof<D>;
  return static_cast<int>(std::get<Eigen::VectorXd>(v).size());
}

template <int D>
Variable<D> retract(const Variable<D>& v, const Eigen::Ref<const Eigen::VectorXd>& delta) {
  if (const auto* p = std::get_if<Pose<D>>(&v)) {
    if (delta.size() != kPoseDof<D>) throw std::invalid_argument("retract: dimension mismatch");
    return p->retract(Tangent<D>(delta));
  }
  const auto& x = std::get<Eigen::VectorXd>(v);
  if (delta.size() != x.size()) throw std::invalid_argument("retract: dimension mismatch");
  return Eigen::VectorXd(x + delta);
}

// Tangent-space difference such that retract(a, local(a, b)) == b.
template <int D>
Eigen::VectorXd local_coordinates(const Variable<D>& a, const Variable<D>& b) {
  if (const auto* pa = std::get_if<Pose<D>>(&a)) {
    return Eigen::VectorXd(between(*pa, std::get<Pose<D>>(b)).log());
  }
  return std::get<Eigen::VectorXd>(b) - std::get<Eigen::VectorXd>(a);
}

template <int D>
Translation<D> position_of(const Variable<D>& v) {
  if (const auto* p = std::get_if<Pose<D>>(&v)) return p->translation();
  return Translation<D>(std::get<Eigen::VectorXd>(v));
}

template <int D>
class Values {
 public:
  using Map = std::map<Key, Variable<D>>;

  bool contains(const Key& k) const { return map_.count(k) != 0; }
  std::size_t size() const { return map_.size(); }
  bool empty() const { return map_.empty(); }

  const Variable<D>& at(const Key& k) const {
    auto it = map_.find(k);
    if (it == map_.end()) throw std::out_of_range("missing variable " + to_string(k));
    return it->second;
  }

  const Pose<D>& pose(const Key& k) const {
    const auto* p = std::get_if<Pose<D>>(&at(k));
    if (!p) throw std::invalid_argument(to_string(k) + " is not a pose");
    return *p;
  }

  const Eigen::VectorXd& point(const Key& k) const {
    const auto* p = std::get_if<Eigen::VectorXd>(&at(k));
    if (!p) throw std::invalid_argument(to_string(k) + " is not a point");
    return *p;
  }

  void insert(const Key& k, Variable<D> v) {
    if (!map_.emplace(k, std::move(v)).second) {
      throw std::invalid_argument("duplicate variable " + to_string(k));
    }
  }

  void insert_or_assign(const Key& k, Variable<D> v) { map_.insert_or_assign(k, std::move(v)); }

  void update(const Key& k, Variable<D> v) {
    auto it = map_.find(k);
    if (it == map_.end()) throw std::out_of_range("missing variable " + to_string(k));
    it->second = std::move(v);
  }

  void erase(const Key& k) { map_.erase(k); }

  auto begin() const { return map_.begin(); }
  auto end() const { return map_.end(); }
  const Map& map() const { return map_; }

 private:
  Map map_;
};

}  // namespace rimesa
