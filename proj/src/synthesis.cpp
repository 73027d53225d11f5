#include "sqlsynth/synthesis.hpp"

#include "sqlsynth/prompts.hpp"
#include "sqlsynth/sql_parser.hpp"
#include "sqlsynth/text_util.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <thread>
#include <unordered_set>

namespace sqlsynth {

std::string to_string(Level l) {
    switch (l) {
        case Level::simple: return "simple";
        case Level::moderate: return "moderate";
        case Level::challenging: return "challenging";
        case Level::window: return "window";
    }
    return "unknown";
}

std::string to_string(Round r) { return r == Round::initial ? "initial" : "column_focused"; }

Level level_from_string(std::string_view s) {
    for (const auto l : {Level::simple, Level::moderate, Level::challenging, Level::window}) {
        if (iequals(s, to_string(l))) return l;
    }
    throw std::invalid_argument("unknown level: " + std::string(s));
}

Round round_from_string(std::string_view s) {
    if (s == "initial") return Round::initial;
    if (s == "column_focused") return Round::column_focused;
    throw std::invalid_argument("unknown round: " + std::string(s));
}

void GenerationConfig::validate() const {
    if (n_per_level < 1) throw std::invalid_argument("n_per_level must be >= 1");
    if (min_col_example_count < 0) throw std::invalid_argument("min_col_example_count must be >= 0");
    if (max_repair_attempts < 0) throw std::invalid_argument("max_repair_attempts must be >= 0");
    if (levels.empty()) throw std::invalid_argument("levels must not be empty");
    if (workers == 0) throw std::invalid_argument("workers must be >= 1");
}

nlohmann::ordered_json to_json(const T2SExample& e) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["db_id"] = e.db_id;
    j["subschema_id"] = e.subschema_id;
    j["sql"] = e.sql;
    j["question"] = e.question;
    j["difficulty"] = to_string(e.difficulty);
    j["reasoning"] = e.reasoning ? nlohmann::ordered_json(*e.reasoning) : nlohmann::ordered_json();
    j["judge_verdict"] = e.judge_verdict;
    j["executable"] = e.executable;
    j["repaired"] = e.repaired;
    j["round"] = to_string(e.round);
    for (const auto& [k, v] : e.extra.items()) {
        if (!j.contains(k)) j[k] = v;
    }
    return j;
}

T2SExample t2s_example_from_json(const nlohmann::json& j) {
    T2SExample e;
    e.id = j.at("id").get<std::string>();
    e.db_id = j.at("db_id").get<std::string>();
    e.subschema_id = j.value("subschema_id", std::string());
    e.sql = j.at("sql").get<std::string>();
    e.question = j.at("question").get<std::string>();
    e.difficulty = level_from_string(j.at("difficulty").get<std::string>());
    if (j.contains("reasoning") && j["reasoning"].is_string()) e.reasoning = j["reasoning"].get<std::string>();
    e.judge_verdict = j.value("judge_verdict", false);
    e.executable = j.value("executable", false);
    e.repaired = j.value("repaired", false);
    e.round = round_from_string(j.value("round", std::string("initial")));
    static const std::set<std::string> known{"id",        "db_id",         "subschema_id", "sql",
                                             "question",  "difficulty",    "reasoning",    "judge_verdict",
                                             "executable", "repaired",     "round"};
    for (const auto& [k, v] : j.items()) {
        if (!known.count(k)) e.extra[k] = v;
    }
    return e;
}

nlohmann::ordered_json to_json(const Diagnostic& d) {
    nlohmann::ordered_json j;
    j["stage"] = d.stage;
    j["subschema_id"] = d.subschema_id;
    j["reason"] = d.reason;
    return j;
}

namespace {

const char* level_guide(Level l) {
    switch (l) {
        case Level::simple:
            return "A direct lookup: one or two tables, a filter and a projection, at most one plain aggregate.";
        case Level::moderate:
            return "Join the tables, group with aggregates, or order and limit the result; combine two of these.";
        case Level::challenging:
            return "Use nested subqueries or common table expressions, CASE expressions or arithmetic over "
                   "aggregates, together with joins.";
        case Level::window:
            return "The query must contain at least one window function with an OVER clause, such as a ranking, "
                   "a running total or an aggregate partitioned by a column.";
    }
    return "";
}

std::string quote_ident(std::string_view s) { return "`" + std::string(s) + "`"; }

std::string focus_text(const std::vector<ColumnRef>& cols) {
    std::vector<std::string> parts;
    for (const auto& c : cols) parts.push_back(quote_ident(c.table) + "." + quote_ident(c.column));
    return join(parts, ", ");
}

std::string collapse_ws(std::string_view s) {
    std::string out;
    bool space = false;
    for (const char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = !out.empty();
            continue;
        }
        if (space) out += ' ';
        space = false;
        out += c;
    }
    return out;
}

bool has_over_clause(std::string_view sql) {
    try {
        return classify_features(sql).has_window;
    } catch (const std::exception&) {
    }
    try {
        for (const auto& t : sql::tokenize(sql)) {
            if (t.kind == sql::TokenKind::word && iequals(t.text, "over")) return true;
        }
    } catch (const std::exception&) {
    }
    return false;
}

LlmResponse ask(const GenerationContext& ctx, std::string_view template_id, const Bindings& bindings, Purpose purpose) {
    LlmRequest r;
    r.template_id = std::string(template_id);
    r.rendered_prompt = render_prompt(template_id, bindings);
    r.temperature = default_temperature(purpose);
    r.purpose = purpose;
    return ctx.gateway.complete(r);
}

ExecResult run_sql(const GenerationContext& ctx, std::string_view sql) {
    return execute_query(sql, ctx.db_path, ctx.config.exec);
}

}  // namespace

std::string render_subschema_text(const DatabaseSchema& schema, const SubSchema& ss) {
    std::string out;
    for (const auto& [table_name, columns] : ss.per_table_columns) {
        const auto& table = schema.table(table_name);
        out += "table " + quote_ident(table.name) + "\n";
        for (const auto& col_name : columns) {
            const auto* col = table.find_column(col_name);
            if (!col) throw SchemaError("sub-schema column not in schema: " + table.name + "." + col_name);
            std::string line = "  " + quote_ident(col->name);
            if (!col->declared_type.empty()) line += " " + col->declared_type;
            if (std::find(table.primary_key.begin(), table.primary_key.end(), col->name) != table.primary_key.end()) {
                line += " primary key";
            }
            for (const auto& fk : schema.foreign_keys) {
                if (fk.from_table == table.name && fk.from_column == col->name && ss.columns_of(fk.to_table)) {
                    line += " references " + quote_ident(fk.to_table) + "." + quote_ident(fk.to_column);
                }
            }
            if (col->description) line += " -- " + *col->description;
            if (!col->sample_values.empty()) {
                std::vector<std::string> samples;
                for (const auto& v : col->sample_values) samples.push_back("'" + v + "'");
                line += " samples: " + join(samples, ", ");
            }
            out += line + "\n";
        }
    }
    return out;
}

std::vector<RawPair> generate_for_subschema(const GenerationContext& ctx, const SubSchema& ss,
                                            std::vector<Diagnostic>& diagnostics,
                                            const std::vector<ColumnRef>& focus_columns) {
    const auto sub_schema = render_subschema_text(ctx.schema, ss);
    const auto n = static_cast<std::size_t>(ctx.config.n_per_level);
    std::vector<RawPair> out;
    std::size_t index = 0;
    for (const auto level : ctx.config.levels) {
        for (std::size_t k = 0; k < n; ++k, ++index) {
            Bindings b{{"DB_ID", ctx.schema.db_id},
                       {"SUB_SCHEMA", sub_schema},
                       {"LEVEL", to_string(level)},
                       {"LEVEL_GUIDE", level_guide(level)},
                       {"VARIANT", "query " + std::to_string(k + 1) + " of " + std::to_string(n) +
                                       " at this level; make it differ from the others"}};
            std::string_view tid = templates::synth_sql;
            if (!focus_columns.empty()) {
                tid = templates::synth_sql_focus;
                b["FOCUS_COLUMNS"] = focus_text(focus_columns);
            }
            RawPair pair;
            pair.difficulty = level;
            pair.request_index = index;
            try {
                pair.sql = parse_tagged(ask(ctx, tid, b, Purpose::generate_sql).text).answer;
            } catch (const std::exception& e) {
                diagnostics.push_back({"generate", ss.id, e.what()});
                continue;
            }
            if (level == Level::window && !has_over_clause(pair.sql)) {
                diagnostics.push_back({"window_check", ss.id, "window-level query without OVER: " + pair.sql});
                continue;
            }
            try {
                const Bindings tb{{"DB_ID", ctx.schema.db_id}, {"SUB_SCHEMA", sub_schema}, {"SQL", pair.sql}};
                pair.question = parse_tagged(ask(ctx, templates::sql_to_text, tb, Purpose::sql_to_text).text).answer;
            } catch (const std::exception& e) {
                diagnostics.push_back({"translate", ss.id, e.what()});
                continue;
            }
            if (pair.sql.empty() || pair.question.empty()) {
                diagnostics.push_back({"generate", ss.id, "empty sql or question"});
                continue;
            }
            out.push_back(std::move(pair));
        }
    }
    return out;
}

bool judge_pair(const GenerationContext& ctx, const T2SExample& example, const SubSchema& ss,
                std::vector<Diagnostic>& diagnostics) {
    if (example.sql.empty() || example.question.empty()) {
        throw std::invalid_argument("judge_pair needs both sql and question");
    }
    const Bindings b{{"SUB_SCHEMA", render_subschema_text(ctx.schema, ss)},
                     {"QUESTION", example.question},
                     {"SQL", example.sql}};
    std::string text;
    try {
        text = ask(ctx, templates::judge, b, Purpose::judge).text;
    } catch (const std::exception& e) {
        diagnostics.push_back({"judge", ss.id, std::string("judge call failed: ") + e.what()});
        return false;
    }
    try {
        const auto j = parse_json_object(text, {"verdict"});
        const auto& v = j.at("verdict");
        const auto verdict = v.is_string() ? to_lower(trim(v.get<std::string>())) : std::string();
        if (verdict == "logical" || verdict == "aligned") return true;
        diagnostics.push_back({"judge", ss.id, "rejected " + example.id + ": " + j.value("reason", verdict)});
    } catch (const std::exception& e) {
        diagnostics.push_back({"judge", ss.id, std::string("unparseable verdict: ") + e.what()});
    }
    return false;
}

std::optional<T2SExample> repair_sql(const GenerationContext& ctx, const T2SExample& example, const SubSchema& ss,
                                     const std::string& error_message, std::vector<Diagnostic>& diagnostics) {
    if (run_sql(ctx, example.sql).executable()) {
        throw std::invalid_argument("repair_sql called on an executable query");
    }
    const auto sub_schema = render_subschema_text(ctx.schema, ss);
    auto current = example.sql;
    auto error = error_message;
    for (int attempt = 0; attempt < ctx.config.max_repair_attempts; ++attempt) {
        const Bindings b{{"DB_ID", ctx.schema.db_id},
                         {"SUB_SCHEMA", sub_schema},
                         {"QUESTION", example.question},
                         {"SQL", current},
                         {"ERROR", error}};
        try {
            current = parse_tagged(ask(ctx, templates::repair, b, Purpose::repair).text).answer;
        } catch (const std::exception& e) {
            diagnostics.push_back({"repair", ss.id, std::string("repair call failed: ") + e.what()});
            return std::nullopt;
        }
        const auto r = run_sql(ctx, current);
        if (r.executable()) {
            auto fixed = example;
            fixed.sql = current;
            fixed.executable = true;
            fixed.repaired = true;
            return fixed;
        }
        error = r.error;
    }
    diagnostics.push_back({"repair", ss.id, "dropped " + example.id + " after repair limit: " + error});
    return std::nullopt;
}

std::string generate_reasoning(const GenerationContext& ctx, const T2SExample& example, const SubSchema& ss,
                               std::vector<Diagnostic>& diagnostics) {
    const Bindings b{{"DB_ID", ctx.schema.db_id},
                     {"SUB_SCHEMA", render_subschema_text(ctx.schema, ss)},
                     {"QUESTION", example.question},
                     {"SQL", example.sql}};
    const auto target = normalize_sql_whitespace(example.sql);
    for (int attempt = 0; attempt < 2; ++attempt) {
        TaggedOutput t;
        try {
            t = parse_tagged(ask(ctx, templates::reasoning, b, Purpose::reasoning).text);
        } catch (const LlmError& e) {
            diagnostics.push_back({"reasoning", ss.id, std::string("reasoning call failed: ") + e.what()});
            return {};
        } catch (const std::exception& e) {
            diagnostics.push_back({"reasoning", ss.id, e.what()});
            continue;
        }
        if (t.reasoning.empty()) {
            diagnostics.push_back({"reasoning", ss.id, "empty trace for " + example.id});
            continue;
        }
        if (normalize_sql_whitespace(t.answer) != target) {
            diagnostics.push_back({"reasoning", ss.id, "trace ends with a different query for " + example.id});
            continue;
        }
        return t.reasoning + "\n\n" + example.sql;
    }
    return {};
}

ColumnUsage count_column_usage(const std::vector<T2SExample>& examples, const DatabaseSchema& schema) {
    ColumnUsage usage;
    for (const auto& c : schema.all_columns()) usage.counts[c] = 0;
    for (const auto& e : examples) {
        try {
            for (const auto& ref : extract_schema_elements(e.sql, schema).referenced) ++usage.counts[ref];
        } catch (const std::exception&) {
            ++usage.unparseable;
        }
    }
    return usage;
}

std::set<ColumnRef> select_focus_columns(const std::map<ColumnRef, int>& counts, int threshold) {
    if (threshold < 0) throw std::invalid_argument("threshold must be >= 0");
    std::set<ColumnRef> out;
    for (const auto& [col, n] : counts) {
        if (n < threshold) out.insert(col);
    }
    return out;
}

std::vector<std::pair<SubSchema, std::vector<ColumnRef>>> find_focus_subschemas(
    const std::set<ColumnRef>& focus_columns, const std::vector<SubSchema>& all_subschemas) {
    std::vector<std::pair<SubSchema, std::vector<ColumnRef>>> out;
    std::set<ColumnRef> uncovered = focus_columns;
    std::vector<bool> used(all_subschemas.size(), false);
    while (!uncovered.empty()) {
        std::size_t best = all_subschemas.size();
        std::size_t best_gain = 0;
        for (std::size_t i = 0; i < all_subschemas.size(); ++i) {
            if (used[i]) continue;
            std::size_t gain = 0;
            for (const auto& c : uncovered) gain += all_subschemas[i].contains(c) ? 1 : 0;
            if (gain == 0) continue;
            if (gain > best_gain || (gain == best_gain && all_subschemas[i].id < all_subschemas[best].id)) {
                best = i;
                best_gain = gain;
            }
        }
        if (best == all_subschemas.size()) {
            throw std::logic_error("focus column " + uncovered.begin()->str() + " is in no sub-schema");
        }
        used[best] = true;
        std::vector<ColumnRef> covered;
        for (const auto& c : uncovered) {
            if (all_subschemas[best].contains(c)) covered.push_back(c);
        }
        for (const auto& c : covered) uncovered.erase(c);
        out.emplace_back(all_subschemas[best], std::move(covered));
    }
    return out;
}

std::vector<T2SExample> filter_and_dedup(std::vector<T2SExample> examples) {
    std::vector<T2SExample> out;
    std::unordered_set<std::string> seen;
    for (auto& e : examples) {
        if (!e.judge_verdict || !e.executable) continue;
        if (!seen.insert(normalize_sql_whitespace(e.sql) + "\x1f" + collapse_ws(e.question)).second) continue;
        out.push_back(std::move(e));
    }
    return out;
}

namespace {

PipelineResult process_job(const GenerationContext& ctx, const RoundJob& job, Round round) {
    PipelineResult result;
    auto& diags = result.diagnostics;
    const auto& ss = job.subschema;
    for (auto& raw : generate_for_subschema(ctx, ss, diags, job.focus_columns)) {
        T2SExample e;
        char suffix[16];
        std::snprintf(suffix, sizeof suffix, "-%s-%02zu", round == Round::initial ? "r0" : "r1", raw.request_index);
        e.id = ctx.schema.db_id + "/" + ss.id + suffix;
        e.db_id = ctx.schema.db_id;
        e.subschema_id = ss.id;
        e.sql = std::move(raw.sql);
        e.question = std::move(raw.question);
        e.difficulty = raw.difficulty;
        e.round = round;

        e.judge_verdict = judge_pair(ctx, e, ss, diags);
        if (!e.judge_verdict) continue;

        const auto exec = run_sql(ctx, e.sql);
        if (exec.executable()) {
            e.executable = true;
        } else {
            diags.push_back({"execute", ss.id, e.id + ": " + exec.error});
            auto fixed = repair_sql(ctx, e, ss, exec.error, diags);
            if (!fixed) continue;
            e = std::move(*fixed);
        }

        if (ctx.config.with_reasoning) {
            auto trace = generate_reasoning(ctx, e, ss, diags);
            if (!trace.empty()) e.reasoning = std::move(trace);
        }
        result.examples.push_back(std::move(e));
    }
    return result;
}

std::string checkpoint_key(Round round, const std::string& subschema_id) { return to_string(round) + "\x1f" + subschema_id; }

std::map<std::string, PipelineResult> load_checkpoint(const std::filesystem::path& path) {
    std::map<std::string, PipelineResult> done;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            break;  // torn final line from an interrupted run
        }
        PipelineResult r;
        for (const auto& e : j.at("examples")) r.examples.push_back(t2s_example_from_json(e));
        for (const auto& d : j.at("diagnostics")) {
            r.diagnostics.push_back({d.at("stage"), d.at("subschema_id"), d.at("reason")});
        }
        done[checkpoint_key(round_from_string(j.at("round").get<std::string>()), j.at("subschema_id"))] =
            std::move(r);
    }
    return done;
}

}  // namespace

PipelineResult run_round(const GenerationContext& ctx, const std::vector<RoundJob>& jobs, Round round,
                         const std::optional<std::filesystem::path>& checkpoint) {
    ctx.config.validate();
    std::vector<std::optional<PipelineResult>> results(jobs.size());
    std::ofstream ckpt;
    if (checkpoint) {
        const auto done = load_checkpoint(*checkpoint);
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            const auto it = done.find(checkpoint_key(round, jobs[i].subschema.id));
            if (it != done.end()) results[i] = it->second;
        }
        ckpt.open(*checkpoint, std::ios::app);
        if (!ckpt) throw std::runtime_error("cannot open checkpoint " + checkpoint->string());
    }

    std::mutex mu;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            const auto i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            if (results[i]) continue;
            PipelineResult r;
            try {
                r = process_job(ctx, jobs[i], round);
            } catch (const std::exception& e) {
                r.diagnostics.push_back({"pipeline", jobs[i].subschema.id, e.what()});
            }
            std::lock_guard lock(mu);
            if (ckpt.is_open()) {
                nlohmann::ordered_json line;
                line["round"] = to_string(round);
                line["subschema_id"] = jobs[i].subschema.id;
                line["examples"] = nlohmann::ordered_json::array();
                for (const auto& e : r.examples) line["examples"].push_back(to_json(e));
                line["diagnostics"] = nlohmann::ordered_json::array();
                for (const auto& d : r.diagnostics) line["diagnostics"].push_back(to_json(d));
                ckpt << line.dump() << '\n';
                ckpt.flush();
            }
            results[i] = std::move(r);
        }
    };
    const auto n_threads = std::min(ctx.config.workers, std::max<std::size_t>(jobs.size(), 1));
    std::vector<std::thread> threads;
    for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();

    PipelineResult merged;
    for (auto& r : results) {
        for (auto& e : r->examples) merged.examples.push_back(std::move(e));
        for (auto& d : r->diagnostics) merged.diagnostics.push_back(std::move(d));
    }
    return merged;
}

PipelineResult generate_initial(const GenerationContext& ctx, const std::vector<SubSchema>& subschemas,
                                const std::optional<std::filesystem::path>& checkpoint) {
    std::vector<RoundJob> jobs;
    for (const auto& ss : subschemas) jobs.push_back({ss, {}});
    auto r = run_round(ctx, jobs, Round::initial, checkpoint);
    r.examples = filter_and_dedup(std::move(r.examples));
    return r;
}

PipelineResult balance(const GenerationContext& ctx, const std::vector<SubSchema>& subschemas,
                       const std::vector<T2SExample>& existing,
                       const std::optional<std::filesystem::path>& checkpoint) {
    const auto usage = count_column_usage(existing, ctx.schema);
    PipelineResult out;
    if (usage.unparseable > 0) {
        out.diagnostics.push_back({"count", "", std::to_string(usage.unparseable) + " examples could not be parsed"});
    }
    auto focus = select_focus_columns(usage.counts, ctx.config.min_col_example_count);
    // Only reachable when the caller passes a subset of the sub-schemas.
    for (auto it = focus.begin(); it != focus.end();) {
        const bool held = std::any_of(subschemas.begin(), subschemas.end(),
                                      [&](const SubSchema& ss) { return ss.contains(*it); });
        if (held) {
            ++it;
            continue;
        }
        out.diagnostics.push_back({"balance", "", "no sub-schema holds focus column " + it->str()});
        it = focus.erase(it);
    }
    std::vector<RoundJob> jobs;
    for (auto& [ss, cols] : find_focus_subschemas(focus, subschemas)) jobs.push_back({std::move(ss), std::move(cols)});
    auto round = run_round(ctx, jobs, Round::column_focused, checkpoint);
    out.examples = existing;
    out.examples.insert(out.examples.end(), std::make_move_iterator(round.examples.begin()),
                        std::make_move_iterator(round.examples.end()));
    out.examples = filter_and_dedup(std::move(out.examples));
    out.diagnostics.insert(out.diagnostics.end(), round.diagnostics.begin(), round.diagnostics.end());
    return out;
}

PipelineResult run_pipeline(const GenerationContext& ctx, const std::vector<SubSchema>& subschemas) {
    auto first = generate_initial(ctx, subschemas);
    auto second = balance(ctx, subschemas, first.examples);
    first.examples = std::move(second.examples);
    first.diagnostics.insert(first.diagnostics.end(), second.diagnostics.begin(), second.diagnostics.end());
    return first;
}

void write_examples_jsonl(const std::filesystem::path& path, const std::vector<T2SExample>& examples) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& e : examples) out << to_json(e).dump() << '\n';
}

std::vector<T2SExample> read_examples_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<T2SExample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            out.push_back(t2s_example_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void write_diagnostics_jsonl(const std::filesystem::path& path, const std::vector<Diagnostic>& diagnostics) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& d : diagnostics) out << to_json(d).dump() << '\n';
}

}  // namespace sqlsynth
