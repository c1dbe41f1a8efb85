#include "nvi/parameters.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace nvi {

std::string GroupId::label() const {
  std::string base;
  switch (kind) {
    case GroupKind::target: base = "target"; break;
    case GroupKind::forward_kernel: base = "forward_kernel"; break;
    case GroupKind::reverse_kernel: base = "reverse_kernel"; break;
    case GroupKind::schedule: return "schedule";
    case GroupKind::heuristic: return "heuristic";
    case GroupKind::proposal: return "proposal";
  }
  return base + "(" + std::to_string(level) + ")";
}

GroupId target_group(int k) { return {GroupKind::target, k}; }
GroupId forward_group(int k) { return {GroupKind::forward_kernel, k}; }
GroupId reverse_group(int k) { return {GroupKind::reverse_kernel, k}; }
GroupId schedule_group() { return {GroupKind::schedule, -1}; }
GroupId heuristic_group() { return {GroupKind::heuristic, -1}; }
GroupId proposal_group() { return {GroupKind::proposal, -1}; }

ad::Parameter& ParameterStore::add(const GroupId& group, const std::string& name, const ad::Matrix& init) {
  if (by_name_.count(name) != 0) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  storage_.push_back(ad::Parameter{name, init, ad::Matrix::Zero(init.rows(), init.cols())});
  ad::Parameter* p = &storage_.back();
  groups_[group].push_back(p);
  by_name_[name] = p;
  return *p;
}

const std::vector<ad::Parameter*>& ParameterStore::group(const GroupId& id) const {
  static const std::vector<ad::Parameter*> empty;
  auto it = groups_.find(id);
  return it == groups_.end() ? empty : it->second;
}

bool ParameterStore::has_group(const GroupId& id) const { return groups_.count(id) != 0; }

std::vector<GroupId> ParameterStore::groups() const {
  std::vector<GroupId> out;
  out.reserve(groups_.size());
  for (const auto& [id, _] : groups_) {
    out.push_back(id);
  }
  return out;
}

std::vector<ad::Parameter*> ParameterStore::all() const {
  std::vector<ad::Parameter*> out;
  out.reserve(storage_.size());
  for (const auto& p : storage_) {
    out.push_back(const_cast<ad::Parameter*>(&p));
  }
  return out;
}

ad::Parameter& ParameterStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) {
    throw std::out_of_range("unknown parameter: " + name);
  }
  return *it->second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : storage_) {
    n += static_cast<std::size_t>(p.value.size());
  }
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& p : storage_) {
    p.grad.setZero(p.value.rows(), p.value.cols());
  }
}

void ParameterStore::zero_grads(const GroupId& id) {
  for (ad::Parameter* p : group(id)) {
    p->grad.setZero(p->value.rows(), p->value.cols());
  }
}

void ParameterStore::save(std::ostream& out) const {
  char buf[32];
  for (const auto& p : storage_) {
    out << p.name << ' ' << p.value.rows() << ' ' << p.value.cols();
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", p.value.data()[i]);
      out << ' ' << buf;
    }
    out << '\n';
  }
}

void ParameterStore::load(std::istream& in) {
  std::map<std::string, bool> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    std::istringstream row(line);
    std::string name;
    Eigen::Index r = 0;
    Eigen::Index c = 0;
    row >> name >> r >> c;
    auto it = by_name_.find(name);
    if (it == by_name_.end()) {
      throw std::runtime_error("checkpoint has unknown parameter " + name);
    }
    ad::Parameter& p = *it->second;
    if (p.value.rows() != r || p.value.cols() != c) {
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    }
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      std::string tok;
      if (!(row >> tok)) {
        throw std::runtime_error("checkpoint truncated at " + name);
      }
      p.value.data()[i] = std::stod(tok);
    }
    seen[name] = true;
  }
  for (const auto& p : storage_) {
    if (!seen[p.name]) {
      throw std::runtime_error("checkpoint is missing parameter " + p.name);
    }
  }
}

}  // namespace nvi
