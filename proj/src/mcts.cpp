#include "nosqlgen/mcts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nosqlgen/metrics.hpp"

namespace nosqlgen {

SearchTree::SearchTree() {
  SearchNode root;
  root.id = 0;
  nodes_.push_back(std::move(root));
}

int SearchTree::add_child(int parent_id, StepProposal step, bool terminal,
                          std::optional<std::string> final_query) {
  SearchNode n;
  n.id = static_cast<int>(nodes_.size());
  n.parent = parent_id;
  n.step = std::move(step);
  n.depth = node(parent_id).depth + 1;
  n.terminal = terminal;
  n.final_query = std::move(final_query);
  nodes_.push_back(std::move(n));
  node(parent_id).children.push_back(nodes_.back().id);
  return nodes_.back().id;
}

std::vector<int> SearchTree::path_to(int id) const {
  std::vector<int> path;
  for (std::optional<int> cur = id; cur; cur = node(*cur).parent) {
    path.push_back(*cur);
  }
  std::reverse(path.begin(), path.end());
  return path;
}

std::vector<StepProposal> SearchTree::prefix_steps(int id) const {
  std::vector<StepProposal> steps;
  for (int nid : path_to(id)) {
    const SearchNode& n = node(nid);
    if (!n.step || n.terminal) continue;
    steps.push_back(*n.step);
  }
  return steps;
}

double uct(const SearchNode& node, int parent_visits, double c) {
  if (node.visits == 0) return std::numeric_limits<double>::infinity();
  const double q = node.cum_reward / static_cast<double>(node.visits);
  const double ln_parent = std::log(static_cast<double>(std::max(parent_visits, 1)));
  return q + c * std::sqrt(ln_parent / static_cast<double>(node.visits));
}

namespace {

/// A node is dead when nothing can ever happen under it: it is internal,
/// cannot be expanded further, and every child is dead.
bool is_dead(const SearchTree& tree, int id, const SearchConfig& config) {
  const SearchNode& n = tree.node(id);
  if (n.terminal) return false;
  if (n.depth >= config.max_depth) return false;
  if (static_cast<int>(n.children.size()) < config.m && !n.no_expand) return false;
  for (int child : n.children) {
    if (!is_dead(tree, child, config)) return false;
  }
  return true;
}

}  // namespace

std::optional<int> select(const SearchTree& tree, const SearchConfig& config) {
  int cur = tree.root_id();
  while (true) {
    const SearchNode& n = tree.node(cur);
    if (n.terminal) return cur;                       // trivial re-roll
    if (n.depth >= config.max_depth) return cur;      // threshold rollout
    if (static_cast<int>(n.children.size()) < config.m && !n.no_expand) {
      return cur;                                      // room to expand
    }
    int best = -1;
    double best_value = -std::numeric_limits<double>::infinity();
    for (int child : n.children) {  // creation order; ties keep the lowest id
      if (is_dead(tree, child, config)) continue;
      double u = uct(tree.node(child), n.visits, config.c);
      if (u > best_value) {
        best_value = u;
        best = child;
      }
    }
    if (best < 0) return std::nullopt;  // search exhausted on this tree
    cur = best;
  }
}

namespace {

std::string canonical_stage_text(const std::string& stage) {
  if (stage.rfind("db.", 0) == 0) {
    try {
      return render_query(parse_query(stage));
    } catch (const QueryParseError&) {
      return stage;
    }
  }
  try {
    return render_json(parse_relaxed_value(stage));
  } catch (const QueryParseError&) {
    return stage;
  }
}

Trajectory trajectory_for_leaf(const SearchTree& tree, int leaf_id,
                               std::string final_query, int rollout_cut_depth) {
  Trajectory t;
  t.node_ids = tree.path_to(leaf_id);
  t.steps = tree.prefix_steps(leaf_id);
  t.final_query = std::move(final_query);
  t.rollout_cut_depth = rollout_cut_depth;
  return t;
}

}  // namespace

std::vector<int> expand(SearchTree& tree, int node_id, StepPolicy& policy,
                        const TurnContext& ctx, const SearchConfig& config) {
  SearchNode& n = tree.node(node_id);
  const int want = config.m - static_cast<int>(n.children.size());
  std::vector<int> added;
  if (want <= 0 || n.terminal) return added;

  std::vector<StepProposal> proposals;
  try {
    proposals = policy.propose_next_steps(ctx, tree.prefix_steps(node_id), want);
  } catch (const MalformedOutputError&) {
    // the children stay unproduced
  }

  std::vector<std::string> existing;
  for (int child : tree.node(node_id).children) {
    const SearchNode& c = tree.node(child);
    if (c.step) existing.push_back(canonical_stage_text(c.step->stage));
  }

  for (auto& p : proposals) {
    if (static_cast<int>(tree.node(node_id).children.size()) >= config.m) break;
    if (p.stage.empty()) continue;
    std::string canon = canonical_stage_text(p.stage);
    if (std::find(existing.begin(), existing.end(), canon) != existing.end()) {
      continue;
    }
    existing.push_back(std::move(canon));
    const bool terminal = p.terminates();
    std::optional<std::string> fq;
    if (terminal) fq = p.stage;
    int id = tree.add_child(node_id, std::move(p), terminal, std::move(fq));
    if (terminal) {
      tree.node(id).rollout_cut = tree.node(id).depth - 1;  // fully stepped
    }
    added.push_back(id);
  }
  if (added.empty()) tree.node(node_id).no_expand = true;
  return added;
}

Trajectory rollout(SearchTree& tree, int node_id, StepPolicy& policy,
                   const TurnContext& ctx) {
  const SearchNode& n = tree.node(node_id);
  if (n.terminal) {
    int cut = n.rollout_cut >= 0 ? n.rollout_cut : n.depth - 1;
    return trajectory_for_leaf(tree, node_id, *n.final_query, cut);
  }

  RolloutCompletion completion;
  try {
    completion = policy.complete_rollout(ctx, tree.prefix_steps(node_id));
  } catch (const MalformedOutputError&) {
    // unexecutable trajectory, scored -1.0 downstream; no nodes added
    return trajectory_for_leaf(tree, node_id, "", n.depth);
  }

  int cur = node_id;
  for (auto& step : completion.steps) {
    if (step.terminates()) break;  // a full query ends the chain below
    cur = tree.add_child(cur, step, false, std::nullopt);
  }
  int terminal = tree.add_child(cur, {"final query", completion.final_query},
                                true, completion.final_query);
  tree.node(terminal).rollout_cut = tree.node(node_id).depth;
  return trajectory_for_leaf(tree, terminal, completion.final_query,
                             tree.node(node_id).depth);
}

double score(const std::string& final_query, const std::string& gold,
             const DatabaseInstance& db, const EngineLimits& limits) {
  QueryAst gold_ast;
  try {
    gold_ast = parse_query(gold);
  } catch (const QueryParseError& e) {
    throw DataError("gold query does not parse: " + std::string(e.what()));
  }
  ExecutionOutcome gold_out = execute(gold_ast, db, limits);
  if (!gold_out.ok) {
    throw DataError("gold query failed to execute: " + gold_out.message);
  }

  QueryAst pred_ast;
  try {
    pred_ast = parse_query(final_query);
  } catch (const QueryParseError&) {
    return -1.0;
  }
  ExecutionOutcome pred_out = execute(pred_ast, db, limits);
  if (!pred_out.ok) return -1.0;
  return execution_value_match(pred_out, gold_out) ? 1.0 : -0.5;
}

void backpropagate(SearchTree& tree, const Trajectory& trajectory, double r) {
  for (int id : trajectory.node_ids) {
    SearchNode& n = tree.node(id);
    n.cum_reward += r;
    n.visits += 1;
  }
}

SearchResult run_search(const TurnContext& ctx, const std::string& gold,
                        const SearchConfig& config, StepPolicy& policy,
                        const DatabaseInstance& db, const EngineLimits& limits) {
  // surface gold-side problems before any search work
  score(gold, gold, db, limits);

  SearchResult result;
  SearchTree& tree = result.tree;

  for (int iter = 0; iter < config.n_rollout; ++iter) {
    std::optional<int> selected = select(tree, config);
    if (!selected) break;  // exhausted: return what was collected
    const SearchNode& n = tree.node(*selected);

    std::optional<Trajectory> trajectory;
    if (!n.terminal && n.depth < config.max_depth &&
        static_cast<int>(n.children.size()) < config.m && !n.no_expand) {
      std::vector<int> added = expand(tree, *selected, policy, ctx, config);
      for (int id : added) {
        const SearchNode& child = tree.node(id);
        if (child.terminal) {
          trajectory = trajectory_for_leaf(tree, id, *child.final_query,
                                           child.rollout_cut);
          break;  // first terminal child is the iteration's trajectory
        }
      }
    } else {
      trajectory = rollout(tree, *selected, policy, ctx);
    }

    if (trajectory) {
      trajectory->reward = score(trajectory->final_query, gold, db, limits);
      backpropagate(tree, *trajectory, trajectory->reward);
      trajectory->discovery_index = static_cast<int>(result.trajectories.size());
      result.trajectories.push_back(std::move(*trajectory));
    }
  }

  for (auto& t : result.trajectories) {
    if (t.node_ids.empty()) continue;
    const SearchNode& leaf = tree.node(t.node_ids.back());
    t.terminal_q = leaf.visits > 0
                       ? leaf.cum_reward / static_cast<double>(leaf.visits)
                       : 0.0;
  }
  return result;
}

std::string dump_tree(const SearchTree& tree) {
  Doc root;
  Value::Array nodes;
  for (const auto& n : tree.nodes()) {
    Doc e;
    e.set("id", Value(static_cast<std::int64_t>(n.id)));
    e.set("parent", n.parent ? Value(static_cast<std::int64_t>(*n.parent))
                             : Value(nullptr));
    if (n.step) {
      Doc s;
      s.set("comment", Value(n.step->comment));
      s.set("stage", Value(n.step->stage));
      e.set("step", Value(std::move(s)));
    } else {
      e.set("step", Value(nullptr));
    }
    e.set("N", Value(static_cast<std::int64_t>(n.visits)));
    e.set("q", Value(n.cum_reward));
    e.set("terminal", Value(n.terminal));
    if (n.final_query) e.set("final_query", Value(*n.final_query));
    nodes.push_back(Value(std::move(e)));
  }
  root.set("nodes", Value(std::move(nodes)));
  return render_json(Value(std::move(root)));
}

std::string dump_trajectories(const std::vector<Trajectory>& trajectories) {
  std::string out;
  for (const auto& t : trajectories) {
    Doc e;
    Value::Array steps;
    for (const auto& s : t.steps) {
      Doc sd;
      sd.set("comment", Value(s.comment));
      sd.set("stage", Value(s.stage));
      steps.push_back(Value(std::move(sd)));
    }
    e.set("steps", Value(std::move(steps)));
    e.set("final_query", Value(t.final_query));
    e.set("reward", Value(t.reward));
    e.set("rollout_cut_depth", Value(static_cast<std::int64_t>(t.rollout_cut_depth)));
    e.set("source", Value(t.source == TrajectorySource::Search ? "search"
                                                               : "refinement"));
    out += render_json(Value(std::move(e)));
    out += '\n';
  }
  return out;
}

}  // namespace nosqlgen
