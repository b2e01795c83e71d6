#include "jm3d/data/category_tree.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace jm3d::data {

const std::string& CategoryTree::parent_of(const std::string& sub) const {
  for (const auto& [parent, subs] : children)
    if (std::find(subs.begin(), subs.end(), sub) != subs.end()) return parent;
  throw std::runtime_error("unknown subcategory: " + sub);
}

std::vector<std::string> CategoryTree::subs_by_code() const {
  std::vector<std::string> out(sub_code.size());
  for (const auto& [name, code] : sub_code) out[code] = name;
  return out;
}

CategoryTree build_category_tree(
    const std::vector<std::pair<std::string, std::optional<std::string>>>& pairs) {
  CategoryTree tree;
  std::map<std::string, std::string> owner;  // sub -> parent
  for (const auto& [parent, maybe_sub] : pairs) {
    if (parent.empty()) throw std::runtime_error("build_category_tree: empty parent name");
    const std::string sub = maybe_sub.value_or(parent);
    if (!tree.parent_code.count(parent)) {
      tree.parent_code[parent] = static_cast<int>(tree.parents.size());
      tree.parents.push_back(parent);
      tree.children[parent] = {};
    }
    auto it = owner.find(sub);
    if (it != owner.end()) {
      if (it->second != parent)
        throw std::runtime_error("subcategory '" + sub + "' appears under two parents: '" +
                                 it->second + "' and '" + parent + "'");
      continue;  // duplicate pair, idempotent
    }
    owner[sub] = parent;
    tree.sub_code[sub] = static_cast<int>(tree.sub_code.size());
    tree.children[parent].push_back(sub);
  }
  return tree;
}

void save_tree_json(const std::string& path, const CategoryTree& tree) {
  nlohmann::json j;
  j["parents"] = tree.parents;
  nlohmann::json kids = nlohmann::json::object();
  for (const auto& parent : tree.parents) kids[parent] = tree.children.at(parent);
  j["children"] = kids;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write tree file: " + path);
  os << j.dump(2) << "\n";
}

CategoryTree load_tree_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open tree file: " + path);
  nlohmann::json j;
  is >> j;
  // Rebuild through the constructor so code assignment stays in one place:
  // parent order from "parents", child order within each parent preserved.
  std::vector<std::pair<std::string, std::optional<std::string>>> pairs;
  for (const auto& parent : j.at("parents").get<std::vector<std::string>>())
    for (const auto& sub : j.at("children").at(parent).get<std::vector<std::string>>())
      pairs.emplace_back(parent, sub);
  return build_category_tree(pairs);
}

}  // namespace jm3d::data
