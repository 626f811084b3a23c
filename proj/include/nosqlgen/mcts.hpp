#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nosqlgen/engine.hpp"
#include "nosqlgen/model.hpp"
#include "nosqlgen/policy.hpp"

namespace nosqlgen {

struct SearchNode {
  int id = 0;
  std::optional<int> parent;
  std::vector<int> children;
  std::optional<StepProposal> step;  // absent only at the root
  int depth = 0;
  int visits = 0;        // N(v)
  double cum_reward = 0; // q(v)
  bool terminal = false;
  std::optional<std::string> final_query;  // terminal only

  // bookkeeping, not part of the dump format
  bool no_expand = false;   // an expansion here produced nothing; don't retry
  int rollout_cut = -1;     // terminal only: stage-step count where bulk completion began
};

/// Defaults follow the published hyperparameter table: c=1.414, m=3,
/// max_depth=8, n_rollout=10, top_k=1.
struct SearchConfig {
  double c = 1.414;
  int m = 3;
  int max_depth = 8;
  int n_rollout = 10;
  int top_k = 1;
  std::uint64_t seed = 0;
};

enum class TrajectorySource { Search, Refinement };

struct Trajectory {
  std::vector<int> node_ids;          // root..leaf; empty for refinements
  std::vector<StepProposal> steps;    // stage steps (the final query excluded)
  std::string final_query;            // empty when completion failed
  double reward = 0;                  // 1.0 | -0.5 | -1.0 after scoring
  int rollout_cut_depth = 0;          // steps.size() when fully stepped
  double terminal_q = 0;              // leaf Q at end of search
  TrajectorySource source = TrajectorySource::Search;
  int discovery_index = 0;
};

class SearchTree {
 public:
  SearchTree();

  const SearchNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  SearchNode& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  int root_id() const { return 0; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<SearchNode>& nodes() const { return nodes_; }

  int add_child(int parent_id, StepProposal step, bool terminal,
                std::optional<std::string> final_query);

  /// Steps along root..id, excluding the root and any terminal node's step.
  std::vector<StepProposal> prefix_steps(int id) const;
  std::vector<int> path_to(int id) const;

 private:
  std::vector<SearchNode> nodes_;
};

/// Eq-1 value: q/N + c*sqrt(ln(parent_visits)/N); +infinity when unvisited.
double uct(const SearchNode& node, int parent_visits, double c);

/// Descends by maximal UCT (ties to the lowest id) and returns the first node
/// that is terminal, at max_depth, or still expandable. nullopt when every
/// reachable branch is exhausted.
std::optional<int> select(const SearchTree& tree, const SearchConfig& config);

/// Adds up to (m - existing children) proposals under node_id; proposals that
/// are complete queries become terminal children. Malformed policy output
/// prunes the affected children. Returns the new ids.
std::vector<int> expand(SearchTree& tree, int node_id, StepPolicy& policy,
                        const TurnContext& ctx, const SearchConfig& config);

/// Single bulk completion from node_id; every returned step is retained as a
/// chain of nodes ending in a terminal. A terminal node_id replays its stored
/// query. Returns the unscored trajectory.
Trajectory rollout(SearchTree& tree, int node_id, StepPolicy& policy,
                   const TurnContext& ctx);

/// Rule-based reward: -1.0 unexecutable, 1.0 on execution value match with
/// gold, -0.5 otherwise. The gold query must parse and execute.
double score(const std::string& final_query, const std::string& gold,
             const DatabaseInstance& db, const EngineLimits& limits = {});

/// q += r, N += 1 for every node on the trajectory, root and leaf included.
void backpropagate(SearchTree& tree, const Trajectory& trajectory, double r);

struct SearchResult {
  SearchTree tree;
  std::vector<Trajectory> trajectories;
};

/// n_rollout iterations of select -> (expand | rollout) -> score ->
/// backpropagate. An expansion that creates a terminal child scores it as
/// that iteration's trajectory; iterations whose expansion stays internal
/// contribute none.
SearchResult run_search(const TurnContext& ctx, const std::string& gold,
                        const SearchConfig& config, StepPolicy& policy,
                        const DatabaseInstance& db,
                        const EngineLimits& limits = {});

std::string dump_tree(const SearchTree& tree);
std::string dump_trajectories(const std::vector<Trajectory>& trajectories);

}  // namespace nosqlgen
