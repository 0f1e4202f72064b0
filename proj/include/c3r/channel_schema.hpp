#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "c3r/tensor.hpp"

namespace c3r {

enum class ChannelRole { Context, Concept };

std::string_view to_string(ChannelRole role);
ChannelRole parse_role(std::string_view s);

struct ChannelSpec {
  std::string name;
  ChannelRole role = ChannelRole::Context;
  /// Position of this channel in the stored image stack.
  int source_index = 0;

  bool operator==(const ChannelSpec&) const = default;
};

/// Assignment of named channels to the context and concept groups.
/// Channel order within each group follows manifest order.
class GroupSchema {
 public:
  GroupSchema() = default;
  /// Validates names, roles and indices; throws ConfigError.
  explicit GroupSchema(std::vector<ChannelSpec> channels);

  const std::vector<ChannelSpec>& channels() const { return channels_; }
  int total() const { return static_cast<int>(channels_.size()); }
  int num_context() const { return static_cast<int>(context_.size()); }
  int num_concept() const { return static_cast<int>(concept_.size()); }

  /// Source indices of each group, in manifest order.
  const std::vector<int>& context_indices() const { return context_; }
  const std::vector<int>& concept_indices() const { return concept_; }
  std::vector<std::string> context_names() const;
  std::vector<std::string> concept_names() const;

  const ChannelSpec& channel(std::string_view name) const;
  std::optional<ChannelSpec> find(std::string_view name) const;

  /// Manifest text that parse_schema() reads back to an equal schema.
  std::string serialize() const;

  bool operator==(const GroupSchema& o) const { return channels_ == o.channels_; }

 private:
  std::vector<ChannelSpec> channels_;
  std::vector<int> context_;
  std::vector<int> concept_;
};

/// Parses a channel manifest: one record per line of whitespace-separated
/// `name=<id> role=<context|concept> index=<int>` pairs. Blank lines and
/// lines starting with '#' are ignored.
GroupSchema parse_schema(std::string_view manifest);
GroupSchema load_schema(const std::string& path);
void save_schema(const GroupSchema& schema, const std::string& path);

/// A batch split into its context and concept channel stacks.
struct GroupedBatch {
  Tensor context;  ///< [B, C1, h, w]
  Tensor content;  ///< concept group [B, C2, h, w]

  int64_t batch() const { return context.dim(0); }
  int64_t height() const { return context.dim(2); }
  int64_t width() const { return context.dim(3); }
  void validate() const;
};

GroupedBatch split_groups(const Tensor& x, const GroupSchema& schema);
/// Inverse of split_groups: re-interleaves groups by source index.
Tensor merge_groups(const GroupedBatch& g, const GroupSchema& schema);

/// One forward pass per concept channel, each against the full shared context.
struct OODSharingPlan {
  struct Pass {
    std::vector<std::string> context;
    std::string concept_channel;
  };
  std::vector<Pass> passes;
  std::vector<std::string> concat_order;

  /// Embedding width when each pass yields `model_dim` features.
  int64_t embedding_dim(int64_t model_dim) const { return static_cast<int64_t>(passes.size()) * model_dim; }
};

OODSharingPlan build_ood_plan(const GroupSchema& target);

/// Extracts the grouped input of one pass from a target-schema stack.
GroupedBatch select_pass(const Tensor& x, const GroupSchema& target, const OODSharingPlan::Pass& pass);

}  // namespace c3r
