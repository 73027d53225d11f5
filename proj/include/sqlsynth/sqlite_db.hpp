#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

struct sqlite3;
struct sqlite3_stmt;

namespace sqlsynth {

class DatabaseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class OpenMode { read_only, read_write, create };

class Statement;

// Thin RAII owner of a sqlite3 connection.
class Database {
public:
    Database(const std::filesystem::path& path, OpenMode mode);
    ~Database();

    Database(const Database&) = delete;
    Database& operator=(const Database&) = delete;
    Database(Database&& other) noexcept;
    Database& operator=(Database&& other) noexcept;

    Statement prepare(std::string_view sql);

    // Runs one or more statements without result rows.
    void exec(std::string_view sql);

    // Interrupts long-running statements once the deadline passes.
    void set_deadline(std::optional<std::chrono::steady_clock::time_point> deadline);
    bool deadline_hit() const noexcept { return deadline_hit_; }

    std::string last_error() const;
    sqlite3* handle() noexcept { return db_; }

private:
    static int progress_callback(void* self);

    sqlite3* db_ = nullptr;
    std::optional<std::chrono::steady_clock::time_point> deadline_;
    bool deadline_hit_ = false;
};

class Statement {
public:
    Statement(Database& db, std::string_view sql);
    ~Statement();

    Statement(const Statement&) = delete;
    Statement& operator=(const Statement&) = delete;
    Statement(Statement&& other) noexcept;
    Statement& operator=(Statement&&) = delete;

    void bind(int index, std::string_view text);
    void bind(int index, std::int64_t value);

    // Advances to the next row; false once exhausted. Throws on engine error.
    bool step();

    int column_count() const;
    std::string column_name(int index) const;
    int column_type(int index) const;  // SQLITE_INTEGER, SQLITE_FLOAT, ...
    std::int64_t column_int(int index) const;
    double column_double(int index) const;
    std::string column_text(int index) const;
    bool column_is_null(int index) const;

    bool is_readonly() const;
    // Text left over after the first statement, trimmed.
    const std::string& tail() const noexcept { return tail_; }

private:
    Database* db_;
    sqlite3_stmt* stmt_ = nullptr;
    std::string tail_;
};

// Double-quotes an identifier for inclusion in generated SQL.
std::string quote_identifier(std::string_view name);

}  // namespace sqlsynth

namespace sqlsynth {

// Creates (or replaces) `db_path` by running every statement of the SQL script.
void build_database_from_script(const std::filesystem::path& script, const std::filesystem::path& db_path);

}  // namespace sqlsynth
