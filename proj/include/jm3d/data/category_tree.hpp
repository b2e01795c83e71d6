#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace jm3d::data {

/// Two-level taxonomy. Parent and subcategory codes are dense, assigned in
/// first-seen order; every subcategory has exactly one parent. A parent with
/// no annotated subcategory lists itself as its sole child.
struct CategoryTree {
  std::vector<std::string> parents;
  std::map<std::string, std::vector<std::string>> children;
  std::map<std::string, int> parent_code;
  std::map<std::string, int> sub_code;

  int parent_count() const { return static_cast<int>(parents.size()); }
  int sub_count() const { return static_cast<int>(sub_code.size()); }
  const std::string& parent_of(const std::string& sub) const;
  bool has_sub(const std::string& sub) const { return sub_code.count(sub) > 0; }

  /// Subcategory names ordered by code.
  std::vector<std::string> subs_by_code() const;
};

/// Builds the tree from (parent, optional subcategory) annotations. A missing
/// subcategory is replaced by the parent name; duplicates are idempotent; a
/// subcategory that appears under two different parents is an error.
CategoryTree build_category_tree(const std::vector<std::pair<std::string, std::optional<std::string>>>& pairs);

void save_tree_json(const std::string& path, const CategoryTree& tree);
CategoryTree load_tree_json(const std::string& path);

}  // namespace jm3d::data
