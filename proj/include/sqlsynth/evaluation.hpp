#pragma once

#include "sqlsynth/dataset_io.hpp"
#include "sqlsynth/linking.hpp"
#include "sqlsynth/schema.hpp"
#include "sqlsynth/sql_analysis.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace sqlsynth {

// ---------------------------------------------------------------------------
// Result comparison

inline constexpr double cell_relative_tolerance = 1e-6;
inline constexpr double cell_absolute_tolerance = 1e-9;

// Numbers (integer or real) equal within the tolerances above; text equal after
// stripping trailing whitespace; null equals only null; number never equals text.
bool cells_equal(const Cell& a, const Cell& b);

// 1 iff the tables hold the same rows with the same column order. Row order
// counts only when `ordered` (gold SQL has a top-level ORDER BY).
int execution_accuracy(const ResultTable& pred, const ResultTable& gold, bool ordered);

// Size of the cell-multiset intersection of two rows.
std::size_t row_overlap(const std::vector<Cell>& a, const std::vector<Cell>& b);

struct SoftF1 {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    double f1 = 0;
};

// Greedy row matching: repeatedly take the unmatched (pred, gold) pair with the
// largest overlap, ties by lower pred index then lower gold index.
SoftF1 soft_f1_detail(const ResultTable& pred, const ResultTable& gold);
double soft_f1(const ResultTable& pred, const ResultTable& gold);

// F1 from matched-cell count and table sizes; both empty is 1, one empty is 0.
double f1_from_counts(std::size_t tp, std::size_t pred_cells, std::size_t gold_cells);

// ---------------------------------------------------------------------------
// Candidate bounds

struct CandidateScore {
    int ex = 0;
    double f1 = 0;
};

struct QuestionBounds {
    std::string question_id;
    int ex_ub = 0;
    int ex_lb = 0;
    double f1_ub = 0;
    double f1_lb = 0;
    std::size_t candidates = 0;
};

struct EvalOutcome {
    std::vector<QuestionBounds> per_question;
    // Means over questions, x100.
    double ex_ub = 0;
    double ex_lb = 0;
    double f1_ub = 0;
    double f1_lb = 0;
};

// UB = max, LB = min over candidates. Throws on an empty candidate list.
QuestionBounds question_bounds(std::string question_id, const std::vector<CandidateScore>& scores);
EvalOutcome aggregate_bounds(const std::vector<std::pair<std::string, std::vector<CandidateScore>>>& scores);

// ---------------------------------------------------------------------------
// Schema linking metrics

struct SchemaElements {
    std::set<std::string> tables;
    std::set<ColumnRef> columns;
};

// Tables and columns referenced by `sql`; throws sql::ParseError.
SchemaElements linking_gold(std::string_view sql, const DatabaseSchema& schema);
SchemaElements elements_of(const FilteredSchema& fs);

struct LinkingMetrics {
    std::size_t questions = 0;
    double table_recall = 0;
    double table_precision = 0;
    double column_recall = 0;
    double column_precision = 0;
    double strict_recall_rate = 0;  // SRR
};

// Set-wise per question, macro-averaged, x100. An empty gold set has recall 1;
// an empty prediction has precision 1 only when the gold set is empty too.
LinkingMetrics linking_metrics(const std::vector<SchemaElements>& predicted, const std::vector<SchemaElements>& gold);

nlohmann::ordered_json to_json(const LinkingMetrics& m);

// ---------------------------------------------------------------------------
// Harness

struct PredictionRecord {
    std::string question_id;
    std::vector<std::string> candidates;
};

// {question_id, candidates: [sql, ...]} per line; error names the line.
std::vector<PredictionRecord> read_predictions_jsonl(const std::filesystem::path& path);
void write_predictions_jsonl(const std::filesystem::path& path, const std::vector<PredictionRecord>& preds);

using DatabaseLocator = std::function<std::filesystem::path(const std::string& db_id)>;

// <dir>/<db_id>/<db_id>.sqlite when present, else <dir>/<db_id>.sqlite.
DatabaseLocator directory_locator(std::filesystem::path dir);

struct CandidateResult {
    std::string sql;
    CandidateScore score;
    std::string error;  // execution failure; scores 0
    bool truncated = false;
};

struct QuestionEvaluation {
    std::string question_id;
    std::string db_id;
    bool ordered = false;
    bool gold_truncated = false;
    bool missing_prediction = false;
    std::optional<std::string> gold_error;
    std::vector<CandidateResult> candidates;
};

struct EvaluationReport {
    std::vector<QuestionEvaluation> questions;
    EvalOutcome outcome;  // over questions whose gold executed
    std::size_t gold_errors = 0;
    std::size_t missing_predictions = 0;
};

EvaluationReport evaluate(const std::vector<PredictionRecord>& predictions, const std::vector<GoldRecord>& gold,
                          const DatabaseLocator& locate, const ExecOptions& exec = {}, std::size_t jobs = 1);

nlohmann::ordered_json to_json(const QuestionEvaluation& q);
nlohmann::ordered_json aggregate_json(const EvaluationReport& r);
std::string report_markdown(const EvaluationReport& r);

}  // namespace sqlsynth
