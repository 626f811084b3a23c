#pragma once

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "nosqlgen/value.hpp"

namespace nosqlgen {

/// Bad input data (dialogue files, database files, gold queries that fail).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An immutable in-memory document database. Collections keep the document
/// order of the source file.
struct DatabaseInstance {
  std::string db_id;
  std::vector<std::pair<std::string, std::vector<Doc>>> collections;

  const std::vector<Doc>* find_collection(std::string_view name) const {
    for (const auto& [n, docs] : collections) {
      if (n == name) return &docs;
    }
    return nullptr;
  }
};

struct DialogueTurn {
  std::string question;
  std::string gold_query;
};

struct Dialogue {
  std::string dialogue_id;
  std::string db_id;
  std::vector<DialogueTurn> turns;
};

/// Inputs for one turn: the database, the history of prior (question, query)
/// pairs, and the current question. Carries no gold query for the current
/// turn; prediction paths only ever see this type.
struct TurnContext {
  const DatabaseInstance* database = nullptr;
  std::string dialogue_id;
  std::vector<std::pair<std::string, std::string>> history;
  std::string question;
  int turn_index = 1;  // 1-based
};

/// Loads {"db_id": ..., "collections": {name: [docs...]}}. Duplicate
/// collection names and non-document rows are rejected.
DatabaseInstance load_database(const std::string& path);
DatabaseInstance database_from_value(const Value& v, const std::string& origin);

/// Loads a JSONL dialogue file, one dialogue per line. Errors name the line.
std::vector<Dialogue> load_dialogues(const std::string& path);
Dialogue dialogue_from_value(const Value& v, const std::string& origin);

/// Pre: 1 <= i <= turns, db.db_id == d.db_id. History is turns 1..i-1.
TurnContext context_for_turn(const Dialogue& d, int i,
                             const DatabaseInstance& db);

/// Deterministic text rendering of the database shape: every collection, the
/// union of dotted field paths over its documents, and the kind of the first
/// value seen per path.
std::string schema_summary(const DatabaseInstance& db);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace nosqlgen
