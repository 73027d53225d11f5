#include "sqlsynth/cli.hpp"

#include "sqlsynth/dataset_io.hpp"
#include "sqlsynth/evaluation.hpp"
#include "sqlsynth/linking.hpp"
#include "sqlsynth/llm_gateway.hpp"
#include "sqlsynth/schema.hpp"
#include "sqlsynth/sqlite_db.hpp"
#include "sqlsynth/subschema.hpp"
#include "sqlsynth/synthesis.hpp"
#include "sqlsynth/text_util.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace sqlsynth {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

constexpr const char* tool_version = "1.0.0";

std::string file_digest(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return sha256_hex(buf.str());
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
}

// Run record written next to every output; no timestamps so reruns compare equal.
struct Manifest {
    std::string command;
    ojson argv = ojson::array();
    ojson config = ojson::object();
    ojson seeds = ojson::object();
    ojson counts = ojson::object();
    ojson inputs = ojson::object();
    ojson outputs = ojson::array();
    ojson warnings = ojson::array();

    void input(const std::string& role, const fs::path& p) {
        inputs[role] = {{"path", p.string()}, {"sha256", file_digest(p)}};
    }
    void output(const fs::path& dir, const std::string& name) {
        outputs.push_back({{"file", name}, {"sha256", file_digest(dir / name)}});
    }

    ojson to_json() const {
        ojson j;
        j["tool"] = "sqlsynth";
        j["version"] = tool_version;
        j["command"] = command;
        j["argv"] = argv;
        j["config"] = config;
        j["config_digest"] = sha256_hex(config.dump());
        j["seeds"] = seeds;
        j["inputs"] = inputs;
        j["counts"] = counts;
        j["outputs"] = outputs;
        j["warnings"] = warnings;
        return j;
    }

    void write(const fs::path& dir, std::ostream& out) const {
        const auto j = to_json();
        write_file(dir / "manifest.json", j.dump(2) + "\n");
        out << j["counts"].dump() << "\n";
    }
};

// Options shared by several subcommands.
struct Common {
    std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
    std::string db;
    std::string out;
    std::string fk_overrides;
};

struct SubSchemaFlags {
    std::vector<std::size_t> tc{3, 2, 1};
    std::size_t w = 3;
    std::size_t s = 2;
    std::uint64_t seed = 0;
    std::string window_rule = "stop-at-tail";
    std::string joinability = "path-in-schema";
    std::string file;  // precomputed sub-schemas

    void add(CLI::App* app, bool allow_file) {
        app->add_option("--tc", tc, "table counts, e.g. 3,2,1")->delimiter(',');
        app->add_option("-w,--window", w, "sliding window length");
        app->add_option("-s,--stride", s, "sliding window stride");
        app->add_option("--shuffle-seed", seed, "column shuffle seed");
        app->add_option("--window-rule", window_rule)->check(CLI::IsMember({"stop-at-tail", "full-scan"}));
        app->add_option("--joinability", joinability)->check(CLI::IsMember({"path-in-schema", "induced-subgraph"}));
        if (allow_file) app->add_option("--subschemas", file, "sub-schema JSONL from the subschemas command")->check(CLI::ExistingFile);
    }

    SubSchemaConfig config() const {
        SubSchemaConfig c;
        c.table_counts_tc = tc;
        c.window_w = w;
        c.stride_s = s;
        c.shuffle_seed = seed;
        c.window_rule = window_rule_from_string(window_rule);
        c.joinability = joinability_from_string(joinability);
        return c;
    }

    ojson to_json() const {
        return {{"tc", tc}, {"w", w}, {"s", s}, {"shuffle_seed", seed}, {"window_rule", window_rule}, {"joinability", joinability}};
    }

    std::vector<SubSchema> load(const DatabaseSchema& schema, Manifest& m) const {
        if (!file.empty()) {
            m.input("subschemas", file);
            return read_subschemas_jsonl(file);
        }
        m.config["subschemas"] = to_json();
        m.seeds["shuffle_seed"] = seed;
        return construct_sub_schemas(schema, config());
    }
};

struct GatewayFlags {
    std::string mode = "replay";
    std::string store;
    double rps = 4.0;
    std::size_t in_flight = 4;
    int attempts = 3;

    void add(CLI::App* app) {
        app->add_option("--mode", mode, "model access: replay, record or live")
            ->check(CLI::IsMember({"replay", "record", "live"}));
        app->add_option("--replay", store, "replay store (JSONL)");
        app->add_option("--rps", rps, "request rate limit; 0 disables it");
        app->add_option("--max-in-flight", in_flight);
        app->add_option("--max-attempts", attempts);
    }

    ojson to_json() const {
        return {{"mode", mode}, {"rps", rps}, {"max_in_flight", in_flight}, {"max_attempts", attempts}};
    }

    std::unique_ptr<LlmGateway> make(Manifest& m) const {
        GatewayConfig c;
        c.mode = gateway_mode_from_string(mode);
        c.requests_per_second = rps;
        c.burst = std::max(1.0, rps);
        c.max_in_flight = in_flight;
        c.max_attempts = attempts;
        std::shared_ptr<ReplayStore> s;
        std::shared_ptr<LlmProvider> provider;
        if (c.mode != GatewayMode::live) {
            if (store.empty()) throw std::invalid_argument("--replay is required in " + mode + " mode");
            if (c.mode == GatewayMode::replay && !fs::exists(store)) throw std::invalid_argument("replay store not found: " + store);
            s = ReplayStore::load(store);
            if (fs::exists(store)) m.input("replay_store", store);
        }
        if (c.mode != GatewayMode::replay) provider = std::make_shared<HttpProvider>(HttpProviderConfig::from_env());
        m.config["gateway"] = to_json();
        return std::make_unique<LlmGateway>(c, s, provider);
    }

    void finish(const LlmGateway& gw, Manifest& m) const {
        m.counts["llm_calls"] = gw.calls();
        m.counts["provider_calls"] = gw.provider_calls();
        m.counts["retries"] = gw.retries();
        if (gw.config().mode == GatewayMode::record) gw.store()->save(store);
    }
};

struct GenerationFlags {
    GenerationConfig g;
    std::int64_t timeout_ms = 10'000;

    void add(CLI::App* app) {
        app->add_option("--n-per-level", g.n_per_level, "pairs per difficulty level and sub-schema");
        app->add_option("--min-col-count", g.min_col_example_count, "balancing threshold per column");
        app->add_option("--max-repair", g.max_repair_attempts);
        app->add_flag("!--no-reasoning", g.with_reasoning, "skip reasoning traces");
        app->add_option("--exec-timeout-ms", timeout_ms);
        app->add_option("--row-cap", g.exec.row_cap);
    }

    GenerationConfig config(std::size_t jobs) const {
        auto c = g;
        c.workers = jobs;
        c.exec.timeout = std::chrono::milliseconds(timeout_ms);
        c.validate();
        return c;
    }

    ojson to_json(const GenerationConfig& c) const {
        return {{"n_per_level", c.n_per_level},
                {"levels", c.levels},
                {"min_col_example_count", c.min_col_example_count},
                {"max_repair_attempts", c.max_repair_attempts},
                {"with_reasoning", c.with_reasoning},
                {"exec_timeout_ms", timeout_ms},
                {"row_cap", c.exec.row_cap}};
    }
};

fs::path prepare_out(const std::string& out) {
    if (out.empty()) throw std::invalid_argument("--out is required");
    fs::create_directories(out);
    return out;
}

DatabaseSchema load_schema(const Common& c, Manifest& m) {
    m.input("db", c.db);
    std::optional<fs::path> overrides;
    if (!c.fk_overrides.empty()) {
        overrides = c.fk_overrides;
        m.input("fk_overrides", c.fk_overrides);
    }
    return introspect_schema(c.db, overrides);
}

void add_db(CLI::App* app, Common& c, bool required = true) {
    auto* o = app->add_option("--db", c.db, "SQLite database")->check(CLI::ExistingFile);
    if (required) o->required();
    app->add_option("--fk-overrides", c.fk_overrides, "extra foreign keys (JSON)")->check(CLI::ExistingFile);
}

void add_out(CLI::App* app, Common& c) { app->add_option("--out", c.out, "output directory")->required(); }

ojson diag_counts(const std::vector<Diagnostic>& diags) {
    std::map<std::string, std::size_t> by_stage;
    for (const auto& d : diags) ++by_stage[d.stage];
    ojson j = ojson::object();
    for (const auto& [k, v] : by_stage) j[k] = v;
    return j;
}

// Questions for linking: gold records, or examples when lines carry "id".
std::vector<GoldRecord> read_questions(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_object() && j.contains("id") && !j.contains("question_id")) {
            std::vector<GoldRecord> out;
            for (const auto& e : read_jsonl(p)) out.push_back({e.id, e.db_id, e.question, "", e.sql, to_string(e.difficulty)});
            return out;
        }
        break;
    }
    return read_gold(p);
}

std::map<std::string, FilteredSchema> read_filtered(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::map<std::string, FilteredSchema> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out[j.at("question_id").get<std::string>()] = filtered_schema_from_json(j.at("filtered_schema"));
        } catch (const std::exception& e) {
            throw std::runtime_error(p.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

ojson entity_json(const EntityHit& h) {
    return {{"table", h.table}, {"column", h.column}, {"value", h.value}, {"score", h.score}};
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sub-schema driven text-to-SQL data synthesis, linking and evaluation", "sqlsynth"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "TOML/INI file with option values");
    Common c;
    app.add_option("--jobs", c.jobs, "worker threads")->check(CLI::PositiveNumber);

    // build-db
    auto* build_db = app.add_subcommand("build-db", "create a SQLite database from a SQL script");
    std::string script;
    build_db->add_option("--script", script)->required()->check(CLI::ExistingFile);
    build_db->add_option("--out", c.db, "database file to create")->required();

    // introspect
    auto* introspect = app.add_subcommand("introspect", "read tables, keys and samples of a database");
    add_db(introspect, c);
    add_out(introspect, c);
    bool no_samples = false;
    introspect->add_flag("--no-samples", no_samples, "skip sample values");

    // subschemas
    auto* subschemas = app.add_subcommand("subschemas", "enumerate sub-schemas");
    add_db(subschemas, c);
    subschemas->add_option("--out", c.out, "output directory (omit to only count)");
    SubSchemaFlags ss_flags;
    ss_flags.add(subschemas, false);

    // generate / balance
    auto* generate = app.add_subcommand("generate", "initial generation round");
    auto* balance_cmd = app.add_subcommand("balance", "column-focused round for under-used columns");
    SubSchemaFlags gen_ss;
    GatewayFlags gw_flags;
    GenerationFlags gen_flags;
    std::string examples_in;
    std::string checkpoint;
    for (auto* sub : {generate, balance_cmd}) {
        add_db(sub, c);
        add_out(sub, c);
        gen_ss.add(sub, true);
        gw_flags.add(sub);
        gen_flags.add(sub);
        sub->add_option("--checkpoint", checkpoint, "resume file (default <out>/checkpoint.jsonl)");
    }
    balance_cmd->add_option("--examples", examples_in, "output of generate")->required()->check(CLI::ExistingFile);

    // stats
    auto* stats = app.add_subcommand("stats", "level counts, joins, aggregation and column usage");
    add_db(stats, c);
    add_out(stats, c);
    std::vector<std::string> stats_examples;
    std::vector<std::string> stats_gold;
    std::string gold_db_id;
    stats->add_option("--examples", stats_examples, "example JSONL (repeatable)")->check(CLI::ExistingFile);
    stats->add_option("--gold", stats_gold, "benchmark gold file (repeatable)")->check(CLI::ExistingFile);
    stats->add_option("--db-id", gold_db_id, "gold records to keep (default: database file stem)");

    // split
    auto* split = app.add_subcommand("split", "train/dev/test with column coverage");
    add_db(split, c);
    add_out(split, c);
    SplitConfig split_cfg;
    std::vector<double> ratios{0.94, 0.03, 0.03};
    bool no_stratify = false;
    bool no_coverage = false;
    split->add_option("--examples", examples_in)->required()->check(CLI::ExistingFile);
    split->add_option("--ratios", ratios, "train,dev,test")->delimiter(',')->expected(3);
    split->add_option("--seed", split_cfg.seed);
    split->add_flag("--no-stratify", no_stratify);
    split->add_flag("--no-coverage", no_coverage);

    // link
    auto* link = app.add_subcommand("link", "schema linking over a synthetic corpus");
    add_db(link, c);
    add_out(link, c);
    GatewayFlags link_gw;
    link_gw.add(link);
    std::string corpus;
    std::string questions;
    std::string linking_mode = "bm25-top6";
    std::size_t top_k = 6;
    link->add_option("--corpus", corpus, "synthetic examples used for retrieval")->required()->check(CLI::ExistingFile);
    link->add_option("--questions", questions, "gold file or example JSONL")->required()->check(CLI::ExistingFile);
    link->add_option("--linking-mode", linking_mode)->check(CLI::IsMember(linking_mode_names()));
    link->add_option("--top-k", top_k);

    // evaluate
    auto* evaluate_cmd = app.add_subcommand("evaluate", "EX and soft F1 bounds over candidate sets");
    std::string pred_path;
    std::string gold_path;
    std::string db_dir;
    std::string eval_db;
    std::int64_t eval_timeout_ms = 30'000;
    std::size_t eval_row_cap = 10'000;
    evaluate_cmd->add_option("--pred", pred_path)->required()->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--gold", gold_path)->required()->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--db-dir", db_dir, "directory of <db_id>/<db_id>.sqlite or <db_id>.sqlite files");
    evaluate_cmd->add_option("--db", eval_db, "single database for every question")->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--db-id", gold_db_id, "gold records to keep");
    evaluate_cmd->add_option("--out", c.out, "output directory (omit to print the aggregate)");
    evaluate_cmd->add_option("--exec-timeout-ms", eval_timeout_ms);
    evaluate_cmd->add_option("--row-cap", eval_row_cap);

    // export-sft
    auto* export_cmd = app.add_subcommand("export-sft", "fine-tuning records");
    add_db(export_cmd, c);
    add_out(export_cmd, c);
    std::string kind = "T2S";
    std::size_t fs_count = 0;
    bool fs_reasoning = false;
    bool all_configs = false;
    std::string filtered_path;
    std::string pool_path;
    export_cmd->add_option("--examples", examples_in)->required()->check(CLI::ExistingFile);
    export_cmd->add_option("--kind", kind)->check(CLI::IsMember({"T2S", "T2SWS"}, CLI::ignore_case));
    export_cmd->add_option("--fs", fs_count, "few-shot demonstrations");
    export_cmd->add_flag("--fs-reasoning", fs_reasoning);
    export_cmd->add_flag("--all-configs", all_configs, "write all six standard configurations");
    export_cmd->add_option("--filtered", filtered_path, "filtered.jsonl from link")->check(CLI::ExistingFile);
    export_cmd->add_option("--pool", pool_path, "few-shot pool (default: the examples)")->check(CLI::ExistingFile);

    // replay-record
    auto* record = app.add_subcommand("replay-record", "record every model call of generate, balance and link");
    add_db(record, c);
    add_out(record, c);
    SubSchemaFlags rec_ss;
    rec_ss.add(record, true);
    GatewayFlags rec_gw;
    rec_gw.mode = "record";
    rec_gw.add(record);
    GenerationFlags rec_gen;
    rec_gen.add(record);
    std::string rec_questions;
    record->add_option("--questions", rec_questions, "also record linking for these questions")->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        Manifest m;
        for (int i = 1; i < argc; ++i) m.argv.push_back(argv[i]);

        if (build_db->parsed()) {
            if (fs::exists(c.db)) throw std::invalid_argument("refusing to overwrite " + c.db);
            build_database_from_script(script, c.db);
            out << ojson{{"db", c.db}, {"sha256", file_digest(c.db)}}.dump() << "\n";
            return 0;
        }

        if (introspect->parsed()) {
            m.command = "introspect";
            const auto dir = prepare_out(c.out);
            IntrospectOptions opt;
            opt.collect_samples = !no_samples;
            m.input("db", c.db);
            std::optional<fs::path> overrides;
            if (!c.fk_overrides.empty()) {
                overrides = c.fk_overrides;
                m.input("fk_overrides", c.fk_overrides);
            }
            const auto schema = introspect_schema(c.db, overrides, opt);
            m.config["samples"] = !no_samples;
            write_file(dir / "schema.json", to_json(schema).dump(2) + "\n");
            m.output(dir, "schema.json");
            m.counts["tables"] = schema.tables.size();
            m.counts["columns"] = schema.column_count();
            m.counts["foreign_keys"] = schema.foreign_keys.size();
            m.write(dir, out);
            return 0;
        }

        if (subschemas->parsed()) {
            m.command = "subschemas";
            const auto schema = load_schema(c, m);
            const auto cfg = ss_flags.config();
            cfg.validate(schema);
            m.config["subschemas"] = ss_flags.to_json();
            m.seeds["shuffle_seed"] = ss_flags.seed;
            const auto start = std::chrono::steady_clock::now();
            if (c.out.empty()) {
                m.counts["subschemas"] = count_sub_schemas(schema, cfg);
                out << m.counts.dump() << "\n";
            } else {
                const auto dir = prepare_out(c.out);
                const auto all = construct_sub_schemas(schema, cfg);
                write_subschemas_jsonl(dir / "subschemas.jsonl", all);
                m.output(dir, "subschemas.jsonl");
                m.counts["subschemas"] = all.size();
                m.write(dir, out);
            }
            const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
            err << "subschemas: " << m.counts["subschemas"].get<std::uint64_t>() << " in " << ms.count() << " ms\n";
            return 0;
        }

        if (generate->parsed() || balance_cmd->parsed()) {
            const bool is_balance = balance_cmd->parsed();
            m.command = is_balance ? "balance" : "generate";
            const auto dir = prepare_out(c.out);
            const auto schema = load_schema(c, m);
            const auto ss = gen_ss.load(schema, m);
            auto gw = gw_flags.make(m);
            const auto cfg = gen_flags.config(c.jobs);
            m.config["generation"] = gen_flags.to_json(cfg);
            const GenerationContext ctx{schema, c.db, *gw, cfg};
            const fs::path ckpt = checkpoint.empty() ? dir / "checkpoint.jsonl" : fs::path(checkpoint);
            PipelineResult r;
            if (is_balance) {
                m.input("examples", examples_in);
                r = balance(ctx, ss, read_jsonl(examples_in), ckpt);
            } else {
                r = generate_initial(ctx, ss, ckpt);
            }
            write_jsonl(dir / "examples.jsonl", r.examples);
            write_diagnostics_jsonl(dir / "diagnostics.jsonl", r.diagnostics);
            m.output(dir, "examples.jsonl");
            m.output(dir, "diagnostics.jsonl");
            m.counts["subschemas"] = ss.size();
            m.counts["examples"] = r.examples.size();
            m.counts["diagnostics"] = diag_counts(r.diagnostics);
            gw_flags.finish(*gw, m);
            for (const auto& line : gw->take_log()) err << line << "\n";
            m.write(dir, out);
            return 0;
        }

        if (stats->parsed()) {
            m.command = "stats";
            const auto dir = prepare_out(c.out);
            const auto schema = load_schema(c, m);
            if (stats_examples.empty() && stats_gold.empty()) throw std::invalid_argument("give --examples or --gold");
            const std::string db_id = gold_db_id.empty() ? fs::path(c.db).stem().string() : gold_db_id;
            std::vector<std::pair<std::string, StatsReport>> reports;
            for (const auto& p : stats_examples) {
                m.input("examples:" + p, p);
                reports.emplace_back(fs::path(p).stem().string(), compute_stats(read_jsonl(p), schema));
            }
            for (const auto& p : stats_gold) {
                m.input("gold:" + p, p);
                reports.emplace_back(fs::path(p).stem().string(), compute_stats(gold_as_examples(read_gold(p), db_id), schema));
            }
            ojson j = ojson::object();
            for (const auto& [name, r] : reports) {
                j[name] = to_json(r);
                m.counts[name] = {{"total", r.total},
                                  {"unused_columns", r.unused_columns.size()},
                                  {"unused_rate", r.unused_rate}};
            }
            m.config["gold_db_id"] = db_id;
            write_file(dir / "stats.json", j.dump(2) + "\n");
            write_file(dir / "stats.md", stats_markdown(reports));
            m.output(dir, "stats.json");
            m.output(dir, "stats.md");
            m.write(dir, out);
            return 0;
        }

        if (split->parsed()) {
            m.command = "split";
            const auto dir = prepare_out(c.out);
            const auto schema = load_schema(c, m);
            m.input("examples", examples_in);
            split_cfg.ratios = {ratios[0], ratios[1], ratios[2]};
            split_cfg.stratify = !no_stratify;
            split_cfg.coverage = !no_coverage;
            m.config["split"] = {{"ratios", ratios}, {"stratify", split_cfg.stratify}, {"coverage", split_cfg.coverage}};
            m.seeds["split_seed"] = split_cfg.seed;
            const auto r = split_dataset(read_jsonl(examples_in), schema, split_cfg);
            for (const auto& s : r.splits) {
                write_jsonl(dir / (s.name + ".jsonl"), s.examples);
                m.output(dir, s.name + ".jsonl");
                const auto st = compute_stats(s.examples, schema);
                m.counts[s.name] = {{"examples", s.examples.size()}, {"unused_columns", st.unused_columns.size()}};
            }
            for (const auto& w : r.warnings) m.warnings.push_back(w);
            for (const auto& w : r.warnings) err << "warning: " << w << "\n";
            m.write(dir, out);
            return 0;
        }

        if (link->parsed()) {
            m.command = "link";
            const auto dir = prepare_out(c.out);
            const auto schema = load_schema(c, m);
            m.input("corpus", corpus);
            m.input("questions", questions);
            const auto mode = linking_mode_from_string(linking_mode);
            m.config["linking_mode"] = linking_mode;
            m.config["top_k"] = top_k;
            const auto examples = read_jsonl(corpus);
            std::unique_ptr<Retriever> retriever;
            if (mode.retriever == RetrieverKind::bm25) {
                retriever = std::make_unique<Bm25Index>(examples);
            } else {
                retriever = std::make_unique<HashingVectorIndex>(examples);
            }
            const auto values = ValueIndex::build(c.db, schema);
            m.seeds["minhash_seed"] = values.config().seed;
            std::unique_ptr<LlmGateway> gw;
            if (mode.llm || !link_gw.store.empty() || link_gw.mode == "live") gw = link_gw.make(m);
            const auto qs = read_questions(questions);
            std::string lines;
            std::vector<SchemaElements> predicted;
            std::vector<SchemaElements> gold;
            std::size_t unparseable_gold = 0;
            std::size_t diagnostics = 0;
            for (const auto& q : qs) {
                const LinkingContext ctx{schema, *retriever, &values, gw.get(), mode, top_k};
                const auto r = link_question(ctx, q.question, q.evidence);
                diagnostics += r.diagnostics.size();
                ojson j;
                j["question_id"] = q.question_id;
                j["keywords"] = r.keywords.keywords;
                j["retrieved_ids"] = r.retrieved_ids;
                j["context_ids"] = r.context_ids;
                auto& ents = j["entities"] = ojson::array();
                for (const auto& h : r.entities) ents.push_back(entity_json(h));
                j["filtered_schema"] = to_json(r.filtered);
                auto& ds = j["diagnostics"] = ojson::array();
                for (const auto& d : r.diagnostics) ds.push_back(to_json(d));
                lines += j.dump() + "\n";
                if (!q.sql.empty()) {
                    try {
                        gold.push_back(linking_gold(q.sql, schema));
                        predicted.push_back(elements_of(r.filtered));
                    } catch (const std::exception&) {
                        ++unparseable_gold;
                    }
                }
            }
            write_file(dir / "filtered.jsonl", lines);
            m.output(dir, "filtered.jsonl");
            const auto metrics = linking_metrics(predicted, gold);
            write_file(dir / "metrics.json", to_json(metrics).dump(2) + "\n");
            m.output(dir, "metrics.json");
            m.counts["questions"] = qs.size();
            m.counts["scored"] = metrics.questions;
            m.counts["unparseable_gold"] = unparseable_gold;
            m.counts["diagnostics"] = diagnostics;
            m.counts["metrics"] = to_json(metrics);
            if (gw) link_gw.finish(*gw, m);
            m.write(dir, out);
            return 0;
        }

        if (evaluate_cmd->parsed()) {
            m.command = "evaluate";
            m.input("predictions", pred_path);
            m.input("gold", gold_path);
            auto gold = read_gold(gold_path);
            if (!gold_db_id.empty()) {
                std::erase_if(gold, [&](const GoldRecord& g) { return g.db_id != gold_db_id; });
            }
            DatabaseLocator locate;
            if (!eval_db.empty()) {
                locate = [p = fs::path(eval_db)](const std::string&) { return p; };
            } else {
                locate = directory_locator(db_dir.empty() ? fs::path(gold_path).parent_path() : fs::path(db_dir));
            }
            ExecOptions exec;
            exec.timeout = std::chrono::milliseconds(eval_timeout_ms);
            exec.row_cap = eval_row_cap;
            m.config["exec_timeout_ms"] = eval_timeout_ms;
            m.config["row_cap"] = eval_row_cap;
            const auto report = evaluate(read_predictions_jsonl(pred_path), gold, locate, exec, c.jobs);
            const auto agg = aggregate_json(report);
            if (c.out.empty()) {
                out << agg.dump(2) << "\n";
                return 0;
            }
            const auto dir = prepare_out(c.out);
            std::string lines;
            for (const auto& q : report.questions) lines += to_json(q).dump() + "\n";
            write_file(dir / "scores.jsonl", lines);
            write_file(dir / "aggregate.json", agg.dump(2) + "\n");
            write_file(dir / "report.md", report_markdown(report));
            for (const auto* f : {"scores.jsonl", "aggregate.json", "report.md"}) m.output(dir, f);
            m.counts = agg;
            m.write(dir, out);
            return 0;
        }

        if (export_cmd->parsed()) {
            m.command = "export-sft";
            const auto dir = prepare_out(c.out);
            const auto schema = load_schema(c, m);
            m.input("examples", examples_in);
            const auto examples = read_jsonl(examples_in);
            std::optional<std::map<std::string, FilteredSchema>> filtered;
            if (!filtered_path.empty()) {
                m.input("filtered", filtered_path);
                filtered = read_filtered(filtered_path);
            }
            std::vector<T2SExample> pool;
            if (!pool_path.empty()) {
                m.input("pool", pool_path);
                pool = read_jsonl(pool_path);
            } else {
                pool = examples;
            }
            std::vector<SftConfig> configs;
            if (all_configs) {
                configs = standard_sft_configs();
            } else {
                configs.push_back({dataset_kind_from_string(kind), fs_count, fs_reasoning});
            }
            for (const auto& cfg : configs) {
                const auto recs = export_sft(examples, schema, cfg, filtered ? &*filtered : nullptr, &pool);
                std::string lines;
                for (const auto& r : recs) lines += to_json(r).dump() + "\n";
                const auto name = "sft_" + cfg.name() + ".jsonl";
                write_file(dir / name, lines);
                m.output(dir, name);
                m.counts[cfg.name()] = recs.size();
            }
            m.write(dir, out);
            return 0;
        }

        if (record->parsed()) {
            m.command = "replay-record";
            const auto dir = prepare_out(c.out);
            if (rec_gw.store.empty()) rec_gw.store = (dir / "replay.jsonl").string();
            const auto schema = load_schema(c, m);
            const auto ss = rec_ss.load(schema, m);
            auto gw = rec_gw.make(m);
            const auto cfg = rec_gen.config(c.jobs);
            m.config["generation"] = rec_gen.to_json(cfg);
            const GenerationContext ctx{schema, c.db, *gw, cfg};
            const auto first = generate_initial(ctx, ss);
            gw->store()->rewind();
            const auto second = balance(ctx, ss, first.examples);
            m.counts["initial_examples"] = first.examples.size();
            m.counts["balanced_examples"] = second.examples.size();
            if (!rec_questions.empty() && !second.examples.empty()) {
                m.input("questions", rec_questions);
                const Bm25Index bm25(second.examples);
                const HashingVectorIndex vec(second.examples);
                const auto values = ValueIndex::build(c.db, schema);
                const auto qs = read_questions(rec_questions);
                for (const auto& name : linking_mode_names()) {
                    gw->store()->rewind();
                    const auto mode = linking_mode_from_string(name);
                    const Retriever& r = mode.retriever == RetrieverKind::bm25 ? static_cast<const Retriever&>(bm25) : vec;
                    for (const auto& q : qs) link_question({schema, r, &values, gw.get(), mode}, q.question, q.evidence);
                }
            }
            rec_gw.finish(*gw, m);
            m.counts["recordings"] = gw->store()->size();
            m.outputs.push_back({{"file", rec_gw.store}, {"sha256", file_digest(rec_gw.store)}});
            m.write(dir, out);
            return 0;
        }
    } catch (const std::exception& e) {
        ojson j;
        j["error"] = e.what();
        for (const auto* sub : app.get_subcommands()) j["command"] = sub->get_name();
        err << j.dump() << "\n";
        return 1;
    }
    err << app.help();
    return 2;
}

}  // namespace sqlsynth
