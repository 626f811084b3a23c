#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nosqlgen/model.hpp"
#include "nosqlgen/query.hpp"

namespace nosqlgen {

/// One reasoning step: a natural-language comment plus either a single
/// pipeline stage or, for a terminating step, a complete query text
/// (begins with "db.").
struct StepProposal {
  std::string comment;
  std::string stage;

  bool terminates() const { return stage.rfind("db.", 0) == 0; }

  friend bool operator==(const StepProposal&, const StepProposal&) = default;
};

struct RolloutCompletion {
  std::vector<StepProposal> steps;
  std::string final_query;
};

enum class PolicyBackendKind { HttpChat, Scripted, Oracle };

struct PolicyConfig {
  PolicyBackendKind backend = PolicyBackendKind::Oracle;
  std::string endpoint;          // http-chat only
  std::string model_name = "default";
  double temperature = 0.7;
  int max_retries = 2;
  double request_timeout_seconds = 30.0;
  std::string token_env = "POLICY_API_TOKEN";
  std::string script_path;       // scripted only
  std::string prompt_dir;        // empty: built-in templates
};

class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedOutputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Splits tagged model output: <step>comment</step> paired with the following
/// <draft>stage</draft>; <reasoning> spans dropped; a draft beginning with
/// "db." becomes the final query rather than a step. Unbalanced tags or a
/// step without a draft are malformed.
std::pair<std::vector<StepProposal>, std::optional<std::string>>
parse_tagged_output(const std::string& text);

/// Prompt templates with {schema}, {history}, {question}, {steps},
/// {target_query} placeholders. Built-in defaults match the files under
/// prompts/; a directory of .txt files overrides them.
struct PromptSet {
  std::string system;
  std::string next_step;
  std::string rollout;
  std::string path_refinement;

  static PromptSet builtin();
  static PromptSet from_dir(const std::string& dir);
};

std::string render_root_context(const TurnContext& ctx);
std::string render_steps(const std::vector<StepProposal>& steps);
std::string fill_template(const std::string& tmpl, const TurnContext& ctx,
                          const std::vector<StepProposal>& steps,
                          const std::string& target_query = "");

/// Raw text-completion transport behind the policies. Returns up to n
/// sampled completions.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::vector<std::string> complete(const std::string& system,
                                            const std::string& user, int n) = 0;
};

/// Replays completions from a JSONL fixture. Entries are consumed in file
/// order; {"key": "<digest>"} entries are instead matched against the FNV
/// digest of the user prompt. A {"cycle": true} header restarts consumption
/// when the file runs out.
class ScriptedBackend : public ChatBackend {
 public:
  explicit ScriptedBackend(const std::string& fixture_path);
  static std::unique_ptr<ScriptedBackend> from_lines(
      const std::vector<std::string>& contents, bool cycle = false);

  std::vector<std::string> complete(const std::string& system,
                                    const std::string& user, int n) override;

  static std::string request_digest(const std::string& user_prompt);

 private:
  ScriptedBackend() = default;
  std::mutex mu_;
  std::vector<std::string> sequential_;
  std::vector<std::pair<std::string, std::string>> keyed_;
  std::size_t cursor_ = 0;
  bool cycle_ = false;
};

/// OpenAI-style chat completions over HTTP POST. The bearer token comes from
/// the environment variable named in the config; requests are retried
/// max_retries times on transport and server errors.
class HttpChatBackend : public ChatBackend {
 public:
  explicit HttpChatBackend(const PolicyConfig& config);
  std::vector<std::string> complete(const std::string& system,
                                    const std::string& user, int n) override;

 private:
  PolicyConfig config_;
  std::string host_;
  int port_ = 80;
  std::string base_path_;
};

/// The step-proposal interface the search consumes.
class StepPolicy {
 public:
  virtual ~StepPolicy() = default;

  /// Up to n independently sampled proposals; duplicates (by canonical stage
  /// text) collapsed.
  virtual std::vector<StepProposal> propose_next_steps(
      const TurnContext& ctx, const std::vector<StepProposal>& prefix,
      int n) = 0;

  /// All remaining steps plus the final query in one response.
  virtual RolloutCompletion complete_rollout(
      const TurnContext& ctx, const std::vector<StepProposal>& prefix) = 0;

  /// Gold-guided regeneration of a full reasoning path.
  virtual RolloutCompletion refine_path(const TurnContext& ctx,
                                        const std::string& gold) = 0;
};

/// Deterministic policy derived from the gold query: aggregate pipelines
/// replay one stage per step, other methods terminate immediately. Used by
/// tests and by search when no model is wired up.
class OraclePolicy : public StepPolicy {
 public:
  explicit OraclePolicy(const std::string& gold_query);

  std::vector<StepProposal> propose_next_steps(
      const TurnContext& ctx, const std::vector<StepProposal>& prefix,
      int n) override;
  RolloutCompletion complete_rollout(
      const TurnContext& ctx, const std::vector<StepProposal>& prefix) override;
  RolloutCompletion refine_path(const TurnContext& ctx,
                                const std::string& gold) override;

 private:
  RolloutCompletion plan_from(std::size_t covered) const;

  std::string gold_canonical_;
  std::vector<StepProposal> gold_steps_;  // stage steps, excludes the final query
};

/// Backend-driven policy: renders prompts, calls the transport, parses the
/// tagged output. Malformed responses are retried; retry exhaustion throws.
class ModelPolicy : public StepPolicy {
 public:
  ModelPolicy(std::shared_ptr<ChatBackend> backend, PromptSet prompts,
              int max_retries);

  std::vector<StepProposal> propose_next_steps(
      const TurnContext& ctx, const std::vector<StepProposal>& prefix,
      int n) override;
  RolloutCompletion complete_rollout(
      const TurnContext& ctx, const std::vector<StepProposal>& prefix) override;
  RolloutCompletion refine_path(const TurnContext& ctx,
                                const std::string& gold) override;

 private:
  RolloutCompletion completion_request(const std::string& tmpl,
                                       const TurnContext& ctx,
                                       const std::vector<StepProposal>& prefix,
                                       const std::string& target_query);

  std::shared_ptr<ChatBackend> backend_;
  PromptSet prompts_;
  int max_retries_;
};

/// Builds the policy a run configuration asks for. gold is required for the
/// oracle backend and must be absent on prediction paths.
std::unique_ptr<StepPolicy> make_policy(
    const PolicyConfig& config, const std::optional<std::string>& gold,
    std::shared_ptr<ChatBackend> shared_backend = nullptr);

/// The transport for scripted/http backends, shared across turns.
std::shared_ptr<ChatBackend> make_backend(const PolicyConfig& config);

}  // namespace nosqlgen
