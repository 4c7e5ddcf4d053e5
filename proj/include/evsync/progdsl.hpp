#pragma once

#include <cctype>
#include <stdexcept>
#include <string>
#include <vector>

// Textual language of select-programs, the model checker's input format:
//
//   program := proc ('|' proc)*
//   proc    := action | 'select' '(' action (',' action)* ')'
//   action  := '!'? identifier
//
// '!' marks output on a channel; a bare identifier marks input.
// Identifiers are [A-Za-z][A-Za-z0-9_]*; whitespace is insignificant.

namespace evsync::dsl {

struct Action {
    std::string channel;
    bool output = false;

    friend bool operator==(const Action& a, const Action& b) {
        return a.channel == b.channel && a.output == b.output;
    }
};

struct SourceProc {
    bool is_select = false;
    std::vector<Action> actions; // exactly one when !is_select; non-empty always

    friend bool operator==(const SourceProc& a, const SourceProc& b) {
        return a.is_select == b.is_select && a.actions == b.actions;
    }
};

struct Program {
    std::vector<SourceProc> procs;

    friend bool operator==(const Program& a, const Program& b) {
        return a.procs == b.procs;
    }
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& msg, std::size_t pos)
        : std::runtime_error(msg + " at position " + std::to_string(pos)),
          position(pos) {}
    std::size_t position;
};

namespace detail {

class Parser {
public:
    explicit Parser(const std::string& text) : text_(text) {}

    Program parse() {
        Program p;
        skip_ws();
        if (eof()) throw ParseError("empty program", pos_);
        p.procs.push_back(parse_proc());
        skip_ws();
        while (!eof()) {
            expect('|');
            p.procs.push_back(parse_proc());
            skip_ws();
        }
        return p;
    }

private:
    SourceProc parse_proc() {
        skip_ws();
        std::size_t mark = pos_;
        if (peek_ident()) {
            std::string id = read_ident();
            if (id == "select") {
                skip_ws();
                if (!eof() && text_[pos_] == '(') return parse_select_body();
                // 'select' not followed by '(' is a plain channel name
            }
            pos_ = mark;
        }
        SourceProc proc;
        proc.actions.push_back(parse_action());
        return proc;
    }

    SourceProc parse_select_body() {
        expect('(');
        SourceProc proc;
        proc.is_select = true;
        skip_ws();
        if (!eof() && text_[pos_] == ')')
            throw ParseError("empty select", pos_);
        proc.actions.push_back(parse_action());
        skip_ws();
        while (!eof() && text_[pos_] == ',') {
            ++pos_;
            proc.actions.push_back(parse_action());
            skip_ws();
        }
        expect(')');
        return proc;
    }

    Action parse_action() {
        skip_ws();
        Action a;
        if (!eof() && text_[pos_] == '!') {
            a.output = true;
            ++pos_;
            skip_ws();
        }
        if (!peek_ident())
            throw ParseError("expected channel name", pos_);
        a.channel = read_ident();
        return a;
    }

    bool peek_ident() {
        return !eof() && std::isalpha(static_cast<unsigned char>(text_[pos_]));
    }

    std::string read_ident() {
        std::size_t start = pos_;
        while (!eof()) {
            char c = text_[pos_];
            if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') ++pos_;
            else break;
        }
        return text_.substr(start, pos_ - start);
    }

    void expect(char c) {
        skip_ws();
        if (eof() || text_[pos_] != c)
            throw ParseError(std::string("expected '") + c + "'", pos_);
        ++pos_;
    }

    void skip_ws() {
        while (!eof() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool eof() const { return pos_ >= text_.size(); }

    const std::string& text_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline Program parse_program(const std::string& text) {
    return detail::Parser(text).parse();
}

inline std::string format_action(const Action& a) {
    return a.output ? "!" + a.channel : a.channel;
}

inline std::string format_program(const Program& p) {
    std::string out;
    for (std::size_t i = 0; i < p.procs.size(); ++i) {
        if (i) out += " | ";
        const SourceProc& proc = p.procs[i];
        if (proc.is_select) {
            out += "select(";
            for (std::size_t j = 0; j < proc.actions.size(); ++j) {
                if (j) out += ",";
                out += format_action(proc.actions[j]);
            }
            out += ")";
        } else {
            out += format_action(proc.actions.front());
        }
    }
    return out;
}

} // namespace evsync::dsl
