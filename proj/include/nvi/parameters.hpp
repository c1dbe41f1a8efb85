#ifndef NVI_PARAMETERS_HPP
#define NVI_PARAMETERS_HPP

#include "nvi/tape.hpp"

#include <deque>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace nvi {

enum class GroupKind { target, forward_kernel, reverse_kernel, schedule, heuristic, proposal };

/// Identifies one parameter group. Level-indexed kinds carry the level k;
/// schedule, heuristic and proposal use level -1.
struct GroupId {
  GroupKind kind = GroupKind::target;
  int level = -1;

  auto operator<=>(const GroupId&) const = default;
  [[nodiscard]] std::string label() const;
};

GroupId target_group(int k);
GroupId forward_group(int k);
GroupId reverse_group(int k);
GroupId schedule_group();
GroupId heuristic_group();
GroupId proposal_group();

/// Owns every trainable array. Each parameter belongs to exactly one group and
/// addresses are stable for the lifetime of the store.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  ad::Parameter& add(const GroupId& group, const std::string& name, const ad::Matrix& init);

  [[nodiscard]] const std::vector<ad::Parameter*>& group(const GroupId& id) const;
  [[nodiscard]] bool has_group(const GroupId& id) const;
  [[nodiscard]] std::vector<GroupId> groups() const;
  [[nodiscard]] std::vector<ad::Parameter*> all() const;
  [[nodiscard]] ad::Parameter& find(const std::string& name);
  [[nodiscard]] std::size_t size() const { return storage_.size(); }
  [[nodiscard]] std::size_t scalar_count() const;

  void zero_grads();
  void zero_grads(const GroupId& id);

  /// Plain-text checkpoint: one line per parameter with name, shape and values.
  void save(std::ostream& out) const;
  /// Loads values by name. Every stored parameter must be present with the
  /// same shape; throws std::runtime_error otherwise.
  void load(std::istream& in);

 private:
  std::deque<ad::Parameter> storage_;
  std::map<GroupId, std::vector<ad::Parameter*>> groups_;
  std::map<std::string, ad::Parameter*> by_name_;
};

}  // namespace nvi

#endif
