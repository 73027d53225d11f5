#include "sqlsynth/sqlite_db.hpp"

#include <sqlite3.h>

#include <fstream>
#include <sstream>
#include <utility>

namespace sqlsynth {

Database::Database(const std::filesystem::path& path, OpenMode mode) {
    int flags = SQLITE_OPEN_NOMUTEX;
    switch (mode) {
        case OpenMode::read_only: flags |= SQLITE_OPEN_READONLY; break;
        case OpenMode::read_write: flags |= SQLITE_OPEN_READWRITE; break;
        case OpenMode::create: flags |= SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE; break;
    }
    if (mode != OpenMode::create && !std::filesystem::exists(path)) {
        throw DatabaseError("database file not found: " + path.string());
    }
    const int rc = sqlite3_open_v2(path.string().c_str(), &db_, flags, nullptr);
    if (rc != SQLITE_OK) {
        std::string msg = db_ ? sqlite3_errmsg(db_) : sqlite3_errstr(rc);
        sqlite3_close(db_);
        db_ = nullptr;
        throw DatabaseError("cannot open " + path.string() + ": " + msg);
    }
    // Forces a header read so that non-database files fail here.
    char* err = nullptr;
    if (sqlite3_exec(db_, "SELECT count(*) FROM sqlite_master", nullptr, nullptr, &err) != SQLITE_OK) {
        std::string msg = err ? err : "unknown error";
        sqlite3_free(err);
        sqlite3_close(db_);
        db_ = nullptr;
        throw DatabaseError("cannot read " + path.string() + ": " + msg);
    }
}

Database::~Database() {
    if (db_) sqlite3_close(db_);
}

Database::Database(Database&& other) noexcept
    : db_(std::exchange(other.db_, nullptr)), deadline_(other.deadline_) {}

Database& Database::operator=(Database&& other) noexcept {
    if (this != &other) {
        if (db_) sqlite3_close(db_);
        db_ = std::exchange(other.db_, nullptr);
        deadline_ = other.deadline_;
    }
    return *this;
}

Statement Database::prepare(std::string_view sql) { return Statement(*this, sql); }

void Database::exec(std::string_view sql) {
    char* err = nullptr;
    const std::string owned(sql);
    if (sqlite3_exec(db_, owned.c_str(), nullptr, nullptr, &err) != SQLITE_OK) {
        std::string msg = err ? err : last_error();
        sqlite3_free(err);
        throw DatabaseError(msg);
    }
}

int Database::progress_callback(void* self) {
    auto* db = static_cast<Database*>(self);
    if (db->deadline_ && std::chrono::steady_clock::now() >= *db->deadline_) {
        db->deadline_hit_ = true;
        return 1;
    }
    return 0;
}

void Database::set_deadline(std::optional<std::chrono::steady_clock::time_point> deadline) {
    deadline_ = deadline;
    deadline_hit_ = false;
    if (deadline) {
        sqlite3_progress_handler(db_, 1000, &Database::progress_callback, this);
    } else {
        sqlite3_progress_handler(db_, 0, nullptr, nullptr);
    }
}

std::string Database::last_error() const { return db_ ? sqlite3_errmsg(db_) : "no connection"; }

Statement::Statement(Database& db, std::string_view sql) : db_(&db) {
    const char* tail = nullptr;
    const int rc = sqlite3_prepare_v2(db.handle(), sql.data(), static_cast<int>(sql.size()), &stmt_, &tail);
    if (rc != SQLITE_OK) {
        throw DatabaseError(db.last_error());
    }
    if (stmt_ == nullptr) {
        throw DatabaseError("empty statement");
    }
    if (tail) {
        const auto used = static_cast<std::size_t>(tail - sql.data());
        std::string_view rest = sql.substr(used);
        while (!rest.empty() && (rest.front() == ' ' || rest.front() == '\n' || rest.front() == '\t' ||
                                 rest.front() == '\r' || rest.front() == ';')) {
            rest.remove_prefix(1);
        }
        tail_ = std::string(rest);
    }
}

Statement::~Statement() {
    if (stmt_) sqlite3_finalize(stmt_);
}

Statement::Statement(Statement&& other) noexcept
    : db_(other.db_), stmt_(std::exchange(other.stmt_, nullptr)), tail_(std::move(other.tail_)) {}

void Statement::bind(int index, std::string_view text) {
    sqlite3_bind_text(stmt_, index, text.data(), static_cast<int>(text.size()), SQLITE_TRANSIENT);
}

void Statement::bind(int index, std::int64_t value) { sqlite3_bind_int64(stmt_, index, value); }

bool Statement::step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw DatabaseError(db_->last_error());
}

int Statement::column_count() const { return sqlite3_column_count(stmt_); }

std::string Statement::column_name(int index) const {
    const char* name = sqlite3_column_name(stmt_, index);
    return name ? name : "";
}

int Statement::column_type(int index) const { return sqlite3_column_type(stmt_, index); }

std::int64_t Statement::column_int(int index) const { return sqlite3_column_int64(stmt_, index); }

double Statement::column_double(int index) const { return sqlite3_column_double(stmt_, index); }

std::string Statement::column_text(int index) const {
    const auto* text = sqlite3_column_text(stmt_, index);
    if (!text) return {};
    const int len = sqlite3_column_bytes(stmt_, index);
    return std::string(reinterpret_cast<const char*>(text), static_cast<std::size_t>(len));
}

bool Statement::is_readonly() const { return sqlite3_stmt_readonly(stmt_) != 0; }

bool Statement::column_is_null(int index) const { return sqlite3_column_type(stmt_, index) == SQLITE_NULL; }

std::string quote_identifier(std::string_view name) {
    std::string out = "\"";
    for (char c : name) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

void build_database_from_script(const std::filesystem::path& script, const std::filesystem::path& db_path) {
    std::ifstream in(script, std::ios::binary);
    if (!in) throw DatabaseError("cannot read script " + script.string());
    std::ostringstream text;
    text << in.rdbuf();
    std::error_code ec;
    std::filesystem::remove(db_path, ec);
    Database db(db_path, OpenMode::create);
    db.exec("BEGIN");
    db.exec(text.str());
    db.exec("COMMIT");
}

}  // namespace sqlsynth
