#include <cctype>
#include <charconv>
#include <optional>

#include "cfrand/isa.hpp"

namespace cfrand::isa {

namespace {

struct Cursor {
  std::string_view s;
  size_t pos = 0;
  size_t line = 1;

  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t' || s[pos] == ','))
      ++pos;
  }
  bool at_end() const { return pos >= s.size(); }
};

[[noreturn]] void fail(size_t line, const std::string& msg) {
  throw Error("parse", "line " + std::to_string(line) + ": " + msg);
}

bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = std::toupper(static_cast<unsigned char>(c));
  return out;
}

struct LineTokens {
  std::vector<std::string> labels;
  std::vector<std::string> toks;  // instruction tokens, brackets kept
};

LineTokens tokenize_line(std::string_view line, size_t lineno) {
  LineTokens out;
  if (auto c = line.find(';'); c != std::string_view::npos)
    line = line.substr(0, c);
  if (auto c = line.find('#'); c != std::string_view::npos)
    line = line.substr(0, c);

  size_t i = 0;
  auto skip = [&] {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == ','))
      ++i;
  };
  skip();
  while (i < line.size()) {
    const char c = line[i];
    if (c == '[' || c == ']') {
      out.toks.emplace_back(1, c);
      ++i;
    } else if (ident_char(c) || c == '-') {
      size_t j = i + 1;
      while (j < line.size() && ident_char(line[j])) ++j;
      std::string tok(line.substr(i, j - i));
      i = j;
      if (i < line.size() && line[i] == ':') {
        if (!out.toks.empty())
          fail(lineno, "label definition after an instruction");
        out.labels.push_back(tok);
        ++i;
      } else {
        out.toks.push_back(std::move(tok));
      }
    } else {
      fail(lineno, std::string("unexpected character '") + c + "'");
    }
    skip();
  }
  return out;
}

uint8_t parse_reg(const std::string& tok, size_t lineno) {
  std::string u = upper(tok);
  if (u.size() < 2 || u[0] != 'R') fail(lineno, "expected register, got '" + tok + "'");
  unsigned v = 0;
  auto [p, ec] = std::from_chars(u.data() + 1, u.data() + u.size(), v);
  if (ec != std::errc() || p != u.data() + u.size() || v >= kRegCount)
    fail(lineno, "bad register '" + tok + "'");
  if (v == kReservedReg)
    fail(lineno, "r15 is reserved for the obfuscator");
  return static_cast<uint8_t>(v);
}

int64_t parse_int(const std::string& tok, size_t lineno) {
  int64_t v = 0;
  bool neg = false;
  std::string_view s = tok;
  if (!s.empty() && s[0] == '-') {
    neg = true;
    s.remove_prefix(1);
  }
  int base = 10;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    base = 16;
    s.remove_prefix(2);
  }
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    fail(lineno, "bad integer '" + tok + "'");
  return neg ? -v : v;
}

bool looks_like_int(const std::string& tok) {
  if (tok.empty()) return false;
  size_t i = (tok[0] == '-') ? 1 : 0;
  return i < tok.size() && std::isdigit(static_cast<unsigned char>(tok[i]));
}

}  // namespace

Program parse_program(std::string_view text, std::string_view name) {
  Program prog;
  prog.name = std::string(name);
  size_t lineno = 0;
  size_t start = 0;
  std::vector<std::string> pending_labels;

  auto define_label = [&](const std::string& l) {
    if (prog.labels.count(l)) fail(lineno, "duplicate label '" + l + "'");
    prog.labels[l] = prog.code.size();
  };

  while (start <= text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++lineno;
    LineTokens lt = tokenize_line(text.substr(start, end - start), lineno);
    start = end + 1;
    for (const auto& l : lt.labels) {
      define_label(l);
      pending_labels.push_back(l);
    }
    if (lt.toks.empty()) {
      if (end == text.size()) break;
      continue;
    }
    pending_labels.clear();

    const auto& toks = lt.toks;
    const std::string m = upper(toks[0]);
    auto want = [&](size_t n) {
      if (toks.size() != n)
        fail(lineno, "wrong operand count for " + m);
    };
    Instruction in;

    if (m == "NOP") {
      want(1);
      in.op = Op::Nop;
    } else if (m == "HALT") {
      want(1);
      in.op = Op::Halt;
    } else if (m == "OUT") {
      want(2);
      in.op = Op::Out;
      in.rs = parse_reg(toks[1], lineno);
    } else if (m == "JMPR") {
      want(2);
      in.op = Op::Jmpr;
      in.rs = parse_reg(toks[1], lineno);
    } else if (m == "MOV" || m == "ADD" || m == "SUB" || m == "MUL" ||
               m == "CMP") {
      want(3);
      in.op = m == "MOV"   ? Op::Mov
              : m == "ADD" ? Op::Add
              : m == "SUB" ? Op::Sub
              : m == "MUL" ? Op::Mul
                           : Op::Cmp;
      in.rd = parse_reg(toks[1], lineno);
      in.rs = parse_reg(toks[2], lineno);
    } else if (m == "CONST") {
      want(3);
      in.op = Op::Const;
      in.rd = parse_reg(toks[1], lineno);
      in.imm = parse_int(toks[2], lineno);
      if (in.imm < -128 || in.imm > 127)
        fail(lineno, "CONST immediate must fit in signed 8 bits");
    } else if (m == "CMOV") {
      want(4);
      in.op = Op::Cmov;
      auto cc = cond_from_name(upper(toks[1]));
      if (!cc) fail(lineno, "bad condition '" + toks[1] + "'");
      in.cc = *cc;
      in.rd = parse_reg(toks[2], lineno);
      in.rs = parse_reg(toks[3], lineno);
    } else if (m == "LOAD") {
      // LOAD rd, [rs] | LOAD rd, [disp]
      if (toks.size() != 5 || toks[2] != "[" || toks[4] != "]")
        fail(lineno, "LOAD expects rd, [rs] or rd, [disp]");
      in.rd = parse_reg(toks[1], lineno);
      if (looks_like_int(toks[3])) {
        in.op = Op::LoadData;
        in.imm = parse_int(toks[3], lineno);
        if (in.imm < 0 || in.imm + 8 > kSourceDataLimit)
          fail(lineno, "data displacement outside the program window");
      } else {
        in.op = Op::LoadReg;
        in.rs = parse_reg(toks[3], lineno);
      }
    } else if (m == "STORE") {
      // STORE [rd], rs | STORE [disp], rs
      if (toks.size() != 5 || toks[1] != "[" || toks[3] != "]")
        fail(lineno, "STORE expects [rd], rs or [disp], rs");
      in.rs = parse_reg(toks[4], lineno);
      if (looks_like_int(toks[2])) {
        in.op = Op::StoreData;
        in.imm = parse_int(toks[2], lineno);
        if (in.imm < 0 || in.imm + 8 > kSourceDataLimit)
          fail(lineno, "data displacement outside the program window");
      } else {
        in.op = Op::StoreReg;
        in.rd = parse_reg(toks[2], lineno);
      }
    } else if (m == "JMP") {
      want(2);
      in.op = Op::Jmp;
      in.label = toks[1];
    } else if (m == "JCC") {
      want(3);
      auto cc = cond_from_name(upper(toks[1]));
      if (!cc) fail(lineno, "bad condition '" + toks[1] + "'");
      in.op = jcc_op(*cc);
      in.label = toks[2];
    } else if (m == "JEQ" || m == "JNE" || m == "JLT" || m == "JGE") {
      want(2);
      in.op = jcc_op(*cond_from_name(m.substr(1)));
      in.label = toks[1];
    } else {
      fail(lineno, "unknown mnemonic '" + toks[0] + "'");
    }
    prog.code.push_back(std::move(in));
    if (end == text.size()) break;
  }

  if (!pending_labels.empty())
    fail(lineno, "label '" + pending_labels.back() +
                     "' at end of file has no instruction");
  for (const auto& in : prog.code) {
    if (!in.label.empty() && !prog.labels.count(in.label))
      throw Error("parse", "branch to undefined label '" + in.label + "'");
  }
  return prog;
}

}  // namespace cfrand::isa
