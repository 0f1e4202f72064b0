#include "c3r/channel_schema.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace c3r {

std::string_view to_string(ChannelRole role) { return role == ChannelRole::Context ? "context" : "concept"; }

ChannelRole parse_role(std::string_view s) {
  if (s == "context" || s == "ctx") return ChannelRole::Context;
  if (s == "concept" || s == "con") return ChannelRole::Concept;
  throw ConfigError("unknown channel role '" + std::string(s) + "' (expected context or concept)");
}

GroupSchema::GroupSchema(std::vector<ChannelSpec> channels) : channels_(std::move(channels)) {
  std::set<std::string> names;
  std::vector<int> indices;
  for (const auto& c : channels_) {
    if (c.name.empty()) throw ConfigError("channel with empty name");
    if (!names.insert(c.name).second) throw ConfigError("duplicate channel name '" + c.name + "'");
    indices.push_back(c.source_index);
    (c.role == ChannelRole::Context ? context_ : concept_).push_back(c.source_index);
  }
  std::sort(indices.begin(), indices.end());
  for (size_t i = 0; i < indices.size(); ++i)
    if (indices[i] != static_cast<int>(i))
      throw ConfigError("channel indices must form a permutation of 0.." + std::to_string(indices.size() - 1) +
                        " (gap or repeat near index " + std::to_string(i) + ")");
  if (context_.empty()) throw ConfigError("schema needs at least one context channel");
  if (concept_.empty()) throw ConfigError("schema needs at least one concept channel");
}

std::vector<std::string> GroupSchema::context_names() const {
  std::vector<std::string> out;
  for (const auto& c : channels_)
    if (c.role == ChannelRole::Context) out.push_back(c.name);
  return out;
}

std::vector<std::string> GroupSchema::concept_names() const {
  std::vector<std::string> out;
  for (const auto& c : channels_)
    if (c.role == ChannelRole::Concept) out.push_back(c.name);
  return out;
}

std::optional<ChannelSpec> GroupSchema::find(std::string_view name) const {
  for (const auto& c : channels_)
    if (c.name == name) return c;
  return std::nullopt;
}

const ChannelSpec& GroupSchema::channel(std::string_view name) const {
  for (const auto& c : channels_)
    if (c.name == name) return c;
  throw ConfigError("unknown channel '" + std::string(name) + "'");
}

std::string GroupSchema::serialize() const {
  std::ostringstream os;
  os << "# c3r channel manifest\n";
  for (const auto& c : channels_) os << "name=" << c.name << " role=" << to_string(c.role) << " index=" << c.source_index << '\n';
  return os.str();
}

GroupSchema parse_schema(std::string_view manifest) {
  std::vector<ChannelSpec> channels;
  std::istringstream in{std::string(manifest)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::string tok;
    std::optional<std::string> name, role;
    std::optional<int> index;
    while (fields >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw ConfigError("manifest line " + std::to_string(lineno) + ": expected key=value, got '" + tok + "'");
      const auto key = tok.substr(0, eq);
      const auto val = tok.substr(eq + 1);
      if (key == "name") {
        name = val;
      } else if (key == "role") {
        role = val;
      } else if (key == "index") {
        try {
          size_t used = 0;
          index = std::stoi(val, &used);
          if (used != val.size()) throw std::invalid_argument(val);
        } catch (const std::exception&) {
          throw ConfigError("manifest line " + std::to_string(lineno) + ": bad index '" + val + "'");
        }
      } else {
        throw ConfigError("manifest line " + std::to_string(lineno) + ": unknown key '" + key + "'");
      }
    }
    if (!name || !role || !index)
      throw ConfigError("manifest line " + std::to_string(lineno) + ": record needs name, role and index");
    channels.push_back({*name, parse_role(*role), *index});
  }
  return GroupSchema(std::move(channels));
}

GroupSchema load_schema(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open manifest " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_schema(ss.str());
}

void save_schema(const GroupSchema& schema, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write manifest " + path);
  f << schema.serialize();
}

void GroupedBatch::validate() const {
  if (context.rank() != 4 || content.rank() != 4)
    throw ShapeError("grouped batch tensors must be [B, C, h, w]");
  if (context.dim(0) != content.dim(0) || context.dim(2) != content.dim(2) || context.dim(3) != content.dim(3))
    throw ShapeError("context " + shape_str(context.shape()) + " and concept " + shape_str(content.shape()) +
                     " disagree on B, h or w");
  if (context.dim(1) < 1 || content.dim(1) < 1) throw ShapeError("each group needs at least one channel");
}

GroupedBatch split_groups(const Tensor& x, const GroupSchema& schema) {
  if (x.rank() != 4) throw ShapeError("split_groups: expected [B, C, h, w], got " + shape_str(x.shape()));
  if (x.dim(1) != schema.total())
    throw ShapeError("split_groups: input has " + std::to_string(x.dim(1)) + " channels, schema has " +
                     std::to_string(schema.total()));
  return {gather_axis1(x, schema.context_indices()), gather_axis1(x, schema.concept_indices())};
}

Tensor merge_groups(const GroupedBatch& g, const GroupSchema& schema) {
  g.validate();
  if (g.context.dim(1) != schema.num_context() || g.content.dim(1) != schema.num_concept())
    throw ShapeError("merge_groups: group sizes do not match schema");
  const Tensor both[] = {g.context, g.content};
  Tensor stacked = concat_axis1(both);
  // stacked channel j holds source index order[j]; invert that permutation.
  std::vector<int> order = schema.context_indices();
  order.insert(order.end(), schema.concept_indices().begin(), schema.concept_indices().end());
  std::vector<int> inverse(order.size());
  for (size_t j = 0; j < order.size(); ++j) inverse[static_cast<size_t>(order[j])] = static_cast<int>(j);
  return gather_axis1(stacked, inverse);
}

OODSharingPlan build_ood_plan(const GroupSchema& target) {
  OODSharingPlan plan;
  const auto ctx = target.context_names();
  for (const auto& name : target.concept_names()) {
    plan.passes.push_back({ctx, name});
    plan.concat_order.push_back(name);
  }
  return plan;
}

GroupedBatch select_pass(const Tensor& x, const GroupSchema& target, const OODSharingPlan::Pass& pass) {
  if (x.rank() != 4 || x.dim(1) != target.total()) throw ShapeError("select_pass: input does not match target schema");
  std::vector<int> ctx;
  for (const auto& n : pass.context) ctx.push_back(target.channel(n).source_index);
  const int con[] = {target.channel(pass.concept_channel).source_index};
  return {gather_axis1(x, ctx), gather_axis1(x, con)};
}

}  // namespace c3r
