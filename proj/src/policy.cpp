#include "nosqlgen/policy.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "nosqlgen/engine.hpp"

namespace nosqlgen {

// ---------------------------------------------------------------------------
// Tagged output protocol

namespace {

constexpr const char* kMarkers[] = {"<step>",      "</step>",
                                    "<draft>",     "</draft>",
                                    "<reasoning>", "</reasoning>"};

bool contains_marker(const std::string& s) {
  for (const char* m : kMarkers) {
    if (s.find(m) != std::string::npos) return true;
  }
  return false;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string strip_reasoning(const std::string& text) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    std::size_t open = text.find("<reasoning>", pos);
    if (open == std::string::npos) {
      out += text.substr(pos);
      return out;
    }
    std::size_t close = text.find("</reasoning>", open);
    if (close == std::string::npos) {
      throw MalformedOutputError("unbalanced <reasoning> tag");
    }
    out += text.substr(pos, open - pos);
    pos = close + std::strlen("</reasoning>");
  }
}

}  // namespace

std::pair<std::vector<StepProposal>, std::optional<std::string>>
parse_tagged_output(const std::string& raw) {
  std::string text = strip_reasoning(raw);
  std::vector<StepProposal> steps;
  std::optional<std::string> final_query;
  std::optional<std::string> pending_comment;

  std::size_t pos = 0;
  while (true) {
    std::size_t step_at = text.find("<step>", pos);
    std::size_t draft_at = text.find("<draft>", pos);
    if (step_at == std::string::npos && draft_at == std::string::npos) break;
    if (step_at < draft_at) {
      std::size_t close = text.find("</step>", step_at);
      if (close == std::string::npos) {
        throw MalformedOutputError("unbalanced <step> tag");
      }
      if (pending_comment) {
        throw MalformedOutputError("<step> without a following <draft>");
      }
      pending_comment = trim(text.substr(step_at + 6, close - step_at - 6));
      pos = close + 7;
    } else {
      std::size_t close = text.find("</draft>", draft_at);
      if (close == std::string::npos) {
        throw MalformedOutputError("unbalanced <draft> tag");
      }
      std::string content = trim(text.substr(draft_at + 7, close - draft_at - 7));
      pos = close + 8;
      if (content.rfind("db.", 0) == 0) {
        final_query = content;     // full query; a pending comment is consumed
        pending_comment.reset();
      } else {
        if (!pending_comment) {
          throw MalformedOutputError("<draft> without a preceding <step>");
        }
        steps.push_back({*pending_comment, content});
        pending_comment.reset();
      }
    }
  }
  if (pending_comment) {
    throw MalformedOutputError("<step> without a following <draft>");
  }
  for (const auto& s : steps) {
    if (contains_marker(s.comment) || contains_marker(s.stage)) {
      throw MalformedOutputError("nested tag markers in step content");
    }
  }
  if (final_query && contains_marker(*final_query)) {
    throw MalformedOutputError("nested tag markers in final query");
  }
  return {std::move(steps), std::move(final_query)};
}

// ---------------------------------------------------------------------------
// Prompts

namespace {

constexpr const char* kSystemPrompt =
    "You are an assistant that writes MongoDB queries for document databases.\n"
    "You work step by step: every step is a short natural-language comment in a\n"
    "<step> tag followed by one executable item in a <draft> tag. A draft holds\n"
    "either a single aggregation stage or, when the answer is complete, the full\n"
    "query beginning with \"db.\". Anything inside <reasoning> tags is discarded.\n";

constexpr const char* kNextStepPrompt =
    "Database schema:\n{schema}\n"
    "Dialogue history:\n{history}\n"
    "Question: {question}\n"
    "\n"
    "Steps so far:\n{steps}\n"
    "\n"
    "Produce exactly one next step toward the final query: one <step> comment\n"
    "followed by one <draft>. If the query is already complete, the draft must\n"
    "be the full query beginning with \"db.\".\n";

constexpr const char* kRolloutPrompt =
    "Database schema:\n{schema}\n"
    "Dialogue history:\n{history}\n"
    "Question: {question}\n"
    "\n"
    "Steps so far:\n{steps}\n"
    "\n"
    "Finish the construction in a single response: write every remaining step as\n"
    "a <step> comment followed by a <draft> stage, then end with a <draft>\n"
    "containing the complete query beginning with \"db.\".\n";

constexpr const char* kRefinementPrompt =
    "Database schema:\n{schema}\n"
    "Dialogue history:\n{history}\n"
    "Question: {question}\n"
    "\n"
    "Target query:\n{target_query}\n"
    "\n"
    "Rewrite the construction of the target query as a sequence of steps. For\n"
    "each step output a <step> comment and a <draft> stage, and finish with a\n"
    "<draft> containing the complete query beginning with \"db.\".\n";

std::string replace_all(std::string s, const std::string& from,
                        const std::string& to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

std::optional<std::string> try_read(const std::string& path) {
  try {
    return read_file(path);
  } catch (const DataError&) {
    return std::nullopt;
  }
}

}  // namespace

PromptSet PromptSet::builtin() {
  return {kSystemPrompt, kNextStepPrompt, kRolloutPrompt, kRefinementPrompt};
}

PromptSet PromptSet::from_dir(const std::string& dir) {
  PromptSet p = builtin();
  if (dir.empty()) return p;
  if (auto s = try_read(dir + "/system.txt")) p.system = *s;
  if (auto s = try_read(dir + "/generate_next_step.txt")) p.next_step = *s;
  if (auto s = try_read(dir + "/rollout.txt")) p.rollout = *s;
  if (auto s = try_read(dir + "/path_refinement.txt")) p.path_refinement = *s;
  return p;
}

std::string render_steps(const std::vector<StepProposal>& steps) {
  if (steps.empty()) return "(none)";
  std::string out;
  for (const auto& s : steps) {
    if (!out.empty()) out += '\n';
    out += "<step>" + s.comment + "</step>\n<draft>" + s.stage + "</draft>";
  }
  return out;
}

namespace {

std::string render_history(const TurnContext& ctx) {
  if (ctx.history.empty()) return "(none)";
  std::string out;
  int i = 1;
  for (const auto& [q, a] : ctx.history) {
    if (!out.empty()) out += '\n';
    out += "Q" + std::to_string(i) + ": " + q + "\nA" + std::to_string(i) +
           ": " + a;
    ++i;
  }
  return out;
}

}  // namespace

std::string render_root_context(const TurnContext& ctx) {
  std::string out = "Database schema:\n";
  out += ctx.database ? schema_summary(*ctx.database) : "(none)\n";
  out += "Dialogue history:\n" + render_history(ctx) + "\n";
  out += "Question: " + ctx.question + "\n";
  return out;
}

std::string fill_template(const std::string& tmpl, const TurnContext& ctx,
                          const std::vector<StepProposal>& steps,
                          const std::string& target_query) {
  std::string out = tmpl;
  out = replace_all(out, "{schema}",
                    ctx.database ? schema_summary(*ctx.database) : "(none)");
  out = replace_all(out, "{history}", render_history(ctx));
  out = replace_all(out, "{question}", ctx.question);
  out = replace_all(out, "{steps}", render_steps(steps));
  out = replace_all(out, "{target_query}", target_query);
  return out;
}

// ---------------------------------------------------------------------------
// Scripted backend

ScriptedBackend::ScriptedBackend(const std::string& fixture_path) {
  std::string text = read_file(fixture_path);
  std::size_t start = 0, line_no = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    std::string_view line(text.data() + start,
                          (end == std::string::npos ? text.size() : end) - start);
    start = (end == std::string::npos) ? text.size() + 1 : end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    Value v;
    try {
      v = parse_json(line);
    } catch (const JsonError& e) {
      throw DataError(fixture_path + ":" + std::to_string(line_no) + ": " +
                      e.what());
    }
    if (!v.is_doc()) {
      throw DataError(fixture_path + ":" + std::to_string(line_no) +
                      ": expected an object");
    }
    if (const Value* c = v.as_doc().find("cycle")) {
      if (c->is_bool() && c->as_bool()) cycle_ = true;
      continue;
    }
    const Value* content = v.as_doc().find("content");
    if (!content || !content->is_text()) {
      throw DataError(fixture_path + ":" + std::to_string(line_no) +
                      ": entry needs a \"content\" string");
    }
    if (const Value* key = v.as_doc().find("key")) {
      if (!key->is_text()) {
        throw DataError(fixture_path + ":" + std::to_string(line_no) +
                        ": \"key\" must be a digest string");
      }
      keyed_.emplace_back(key->as_text(), content->as_text());
    } else {
      sequential_.push_back(content->as_text());
    }
  }
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_lines(
    const std::vector<std::string>& contents, bool cycle) {
  auto b = std::unique_ptr<ScriptedBackend>(new ScriptedBackend());
  b->sequential_ = contents;
  b->cycle_ = cycle;
  return b;
}

std::string ScriptedBackend::request_digest(const std::string& user_prompt) {
  return fnv1a_hex(user_prompt);
}

std::vector<std::string> ScriptedBackend::complete(const std::string&,
                                                   const std::string& user,
                                                   int n) {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::string> out;
  if (!keyed_.empty()) {
    const std::string digest = request_digest(user);
    for (const auto& [k, content] : keyed_) {
      if (k == digest && static_cast<int>(out.size()) < n) {
        out.push_back(content);
      }
    }
    if (!out.empty()) return out;
  }
  while (static_cast<int>(out.size()) < n) {
    if (cursor_ >= sequential_.size()) {
      if (cycle_ && !sequential_.empty()) {
        cursor_ = 0;
      } else {
        break;
      }
    }
    out.push_back(sequential_[cursor_++]);
  }
  if (out.empty()) {
    throw BackendError("scripted fixture exhausted");
  }
  return out;
}

// ---------------------------------------------------------------------------
// HTTP chat backend

HttpChatBackend::HttpChatBackend(const PolicyConfig& config) : config_(config) {
  std::string url = config.endpoint;
  if (url.rfind("https://", 0) == 0) {
    throw BackendError("https endpoints are not supported by this build; "
                       "use an http proxy");
  }
  if (url.rfind("http://", 0) == 0) url = url.substr(7);
  std::size_t slash = url.find('/');
  std::string hostport = (slash == std::string::npos) ? url : url.substr(0, slash);
  base_path_ = (slash == std::string::npos) ? "/" : url.substr(slash);
  std::size_t colon = hostport.find(':');
  if (colon == std::string::npos) {
    host_ = hostport;
    port_ = 80;
  } else {
    host_ = hostport.substr(0, colon);
    port_ = std::atoi(hostport.c_str() + colon + 1);
  }
  if (host_.empty() || port_ <= 0) {
    throw BackendError("invalid endpoint \"" + config.endpoint + "\"");
  }
}

std::vector<std::string> HttpChatBackend::complete(const std::string& system,
                                                   const std::string& user,
                                                   int n) {
  Doc req;
  req.set("model", Value(config_.model_name));
  Value::Array messages;
  {
    Doc m;
    m.set("role", Value("system"));
    m.set("content", Value(system));
    messages.push_back(Value(std::move(m)));
  }
  {
    Doc m;
    m.set("role", Value("user"));
    m.set("content", Value(user));
    messages.push_back(Value(std::move(m)));
  }
  req.set("messages", Value(std::move(messages)));
  req.set("temperature", Value(config_.temperature));
  req.set("n", Value(static_cast<std::int64_t>(n)));
  const std::string body = render_json(Value(std::move(req)));

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(20 * attempt));
    }
    httplib::Client client(host_, port_);
    const auto timeout =
        std::chrono::milliseconds(static_cast<int>(config_.request_timeout_seconds * 1000));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    httplib::Headers headers;
    if (!config_.token_env.empty()) {
      if (const char* token = std::getenv(config_.token_env.c_str())) {
        headers.emplace("Authorization", std::string("Bearer ") + token);
      }
    }
    auto res = client.Post(base_path_, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "server error: HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw BackendError("HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    try {
      Value v = parse_json(res->body);
      const Value* choices = v.is_doc() ? v.as_doc().find("choices") : nullptr;
      if (!choices || !choices->is_array()) {
        throw JsonError("missing choices", {});
      }
      std::vector<std::string> out;
      for (const auto& c : choices->as_array()) {
        if (!c.is_doc()) continue;
        const Value* msg = c.as_doc().find("message");
        if (!msg || !msg->is_doc()) continue;
        const Value* content = msg->as_doc().find("content");
        if (content && content->is_text()) out.push_back(content->as_text());
      }
      if (out.empty()) throw JsonError("empty choices", {});
      return out;
    } catch (const JsonError& e) {
      last_error = std::string("bad response body: ") + e.what();
      continue;
    }
  }
  throw BackendError("request failed after " +
                     std::to_string(config_.max_retries + 1) + " attempts: " +
                     last_error);
}

// ---------------------------------------------------------------------------
// Oracle policy

namespace {

std::string canonical_stage_or_query(const std::string& stage_text) {
  if (stage_text.rfind("db.", 0) == 0) {
    try {
      return render_query(parse_query(stage_text));
    } catch (const QueryParseError&) {
      return stage_text;
    }
  }
  try {
    return render_json(parse_relaxed_value(stage_text));
  } catch (const QueryParseError&) {
    return stage_text;
  }
}

}  // namespace

OraclePolicy::OraclePolicy(const std::string& gold_query) {
  QueryAst ast;
  try {
    ast = parse_query(gold_query);
  } catch (const QueryParseError& e) {
    throw DataError("oracle gold query does not parse: " + std::string(e.what()));
  }
  gold_canonical_ = render_query(ast);
  if (const auto* a = std::get_if<AggregateSpec>(&ast.method)) {
    for (const auto& s : a->pipeline) {
      Doc stage_doc;
      stage_doc.set(s.keyword, s.body);
      gold_steps_.push_back(
          {"apply " + s.keyword, render_json(Value(std::move(stage_doc)))});
    }
  }
  // find/distinct/count golds terminate in a single step
}

RolloutCompletion OraclePolicy::plan_from(std::size_t covered) const {
  RolloutCompletion out;
  for (std::size_t i = covered; i < gold_steps_.size(); ++i) {
    out.steps.push_back(gold_steps_[i]);
  }
  out.final_query = gold_canonical_;
  return out;
}

std::vector<StepProposal> OraclePolicy::propose_next_steps(
    const TurnContext&, const std::vector<StepProposal>& prefix, int) {
  std::size_t covered = std::min(prefix.size(), gold_steps_.size());
  if (covered < gold_steps_.size()) {
    return {gold_steps_[covered]};
  }
  return {{"final query", gold_canonical_}};
}

RolloutCompletion OraclePolicy::complete_rollout(
    const TurnContext&, const std::vector<StepProposal>& prefix) {
  return plan_from(std::min(prefix.size(), gold_steps_.size()));
}

RolloutCompletion OraclePolicy::refine_path(const TurnContext&,
                                            const std::string&) {
  return plan_from(0);
}

// ---------------------------------------------------------------------------
// Model policy

ModelPolicy::ModelPolicy(std::shared_ptr<ChatBackend> backend, PromptSet prompts,
                         int max_retries)
    : backend_(std::move(backend)),
      prompts_(std::move(prompts)),
      max_retries_(max_retries) {}

std::vector<StepProposal> ModelPolicy::propose_next_steps(
    const TurnContext& ctx, const std::vector<StepProposal>& prefix, int n) {
  const std::string user = fill_template(prompts_.next_step, ctx, prefix);
  std::string last_error = "no proposals";
  for (int attempt = 0; attempt <= max_retries_; ++attempt) {
    std::vector<std::string> choices = backend_->complete(prompts_.system, user, n);
    std::vector<StepProposal> proposals;
    std::vector<std::string> seen;
    for (const auto& choice : choices) {
      try {
        auto [steps, final_query] = parse_tagged_output(choice);
        StepProposal p;
        if (final_query) {
          p = {"final query", *final_query};
        } else if (!steps.empty()) {
          p = steps.front();
        } else {
          last_error = "response held no step or query";
          continue;
        }
        std::string canon = canonical_stage_or_query(p.stage);
        if (std::find(seen.begin(), seen.end(), canon) != seen.end()) continue;
        seen.push_back(std::move(canon));
        proposals.push_back(std::move(p));
      } catch (const MalformedOutputError& e) {
        last_error = e.what();
      }
    }
    if (!proposals.empty()) return proposals;
  }
  throw MalformedOutputError("proposal parsing failed after retries: " +
                             last_error);
}

RolloutCompletion ModelPolicy::completion_request(
    const std::string& tmpl, const TurnContext& ctx,
    const std::vector<StepProposal>& prefix, const std::string& target_query) {
  const std::string user = fill_template(tmpl, ctx, prefix, target_query);
  std::string last_error;
  for (int attempt = 0; attempt <= max_retries_; ++attempt) {
    std::vector<std::string> choices = backend_->complete(prompts_.system, user, 1);
    for (const auto& choice : choices) {
      try {
        auto [steps, final_query] = parse_tagged_output(choice);
        if (!final_query) {
          throw MalformedOutputError("response has no final query draft");
        }
        return {std::move(steps), *final_query};
      } catch (const MalformedOutputError& e) {
        last_error = e.what();
      }
    }
  }
  throw MalformedOutputError("completion parsing failed after retries: " +
                             last_error);
}

RolloutCompletion ModelPolicy::complete_rollout(
    const TurnContext& ctx, const std::vector<StepProposal>& prefix) {
  return completion_request(prompts_.rollout, ctx, prefix, "");
}

RolloutCompletion ModelPolicy::refine_path(const TurnContext& ctx,
                                           const std::string& gold) {
  return completion_request(prompts_.path_refinement, ctx, {}, gold);
}

// ---------------------------------------------------------------------------

std::shared_ptr<ChatBackend> make_backend(const PolicyConfig& config) {
  switch (config.backend) {
    case PolicyBackendKind::Scripted:
      return std::make_shared<ScriptedBackend>(config.script_path);
    case PolicyBackendKind::HttpChat:
      return std::make_shared<HttpChatBackend>(config);
    case PolicyBackendKind::Oracle:
      return nullptr;
  }
  return nullptr;
}

std::unique_ptr<StepPolicy> make_policy(const PolicyConfig& config,
                                        const std::optional<std::string>& gold,
                                        std::shared_ptr<ChatBackend> shared_backend) {
  if (config.backend == PolicyBackendKind::Oracle) {
    if (!gold) {
      throw DataError(
          "oracle backend needs gold supervision and is unavailable here");
    }
    return std::make_unique<OraclePolicy>(*gold);
  }
  std::shared_ptr<ChatBackend> backend =
      shared_backend ? std::move(shared_backend) : make_backend(config);
  return std::make_unique<ModelPolicy>(std::move(backend),
                                       PromptSet::from_dir(config.prompt_dir),
                                       config.max_retries);
}

}  // namespace nosqlgen
