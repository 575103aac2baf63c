#pragma once

// Prompt texts for the oracle and the policy, with placeholder rendering.

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "crw/completion.hpp"
#include "crw/rubric.hpp"

namespace crw::prompts {

/// Replaces every `{name}` occurrence; unknown braces are left alone.
inline std::string render(std::string_view tmpl, const std::vector<std::pair<std::string_view, std::string_view>>& vars) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    if (tmpl[i] == '{') {
      for (const auto& [name, value] : vars) {
        if (tmpl.substr(i + 1, name.size()) == name && i + 1 + name.size() < tmpl.size() &&
            tmpl[i + 1 + name.size()] == '}') {
          out += value;
          i += name.size() + 2;
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += tmpl[i++];
  }
  return out;
}

inline constexpr std::string_view kQaGeneration = R"(You are a clinical reasoning simulator LLM. Your goal is to generate a
question-answer pair for training a smaller LLM in the context of
reasoning about clinical decision support.
The clinical encounter has been split into two parts: past and future.
The past data includes the patient's history up to a certain point,
and the future data includes the patient's clinical outcomes and
events after that point.
--------------------
PAST DATA:
{past_data_json}
{misc_data_json}

Action Space Category: {action_space_category}
Action Space Description: {action_space_description}

Generate a clinical question that is answerable from the past data
only. The clinician-style answer and answer_reasoning must be written
as if the model had access only to the past, even though you (the
simulator) can see the future. Avoid information-extraction style
questions ("What was the last lactate?"); prefer synthesis questions
that require reasoning over multiple signals (labs, vitals, notes).

Use the FUTURE DATA below only to (a) pick clinically meaningful
questions whose gold answer actually occurs downstream, and (b)
populate the "source" field with the specific future events that
verify the answer. Do NOT mention the future in the question,
final_answer, or answer_reasoning text.

FUTURE DATA:
{future_data_json}

Return a single JSON object with fields
{question, final_answer, answer_reasoning, action_space_category,
 action_space_subcategory, source}.)";

inline std::string qa_generation(std::string_view past_json, std::string_view misc_json, std::string_view category,
                                 std::string_view description, std::string_view future_json) {
  return render(kQaGeneration, {{"past_data_json", past_json},
                                {"misc_data_json", misc_json},
                                {"action_space_category", category},
                                {"action_space_description", description},
                                {"future_data_json", future_json}});
}

inline constexpr std::string_view kRubricTask = "Clinical Reasoning";

inline constexpr std::string_view kRubricSystem =
    R"(You are an expert clinician who is tasked with generating a rubric for evaluating the quality of health-related responses.

This rubric will judge the quality of responses generated by a large language model (LLM) in the context of health-related tasks, specifically for {TASK}.

{INPUT_DATA_DESCRIPTION}.

The target audience for reading the answers will always be healthcare professionals such as clinicians, physicians and nurses.

Your generated rubric must ALWAYS contain at least one criterion from each of the five axes: Accuracy, Completeness, CommunicationQuality, ContextAwareness, InstructionFollowing.

You must generate only a single rubric with multiple criteria. Do not generate more than one rubric or any other text!

NEVER mention the future timeline in your rubric, it is imperative that the rubric is based on the past timeline only. Only use the future timeline as your own reference to build the rubric criteria, but never include a direct reference to it in your criteria or as a task/requirement for the model to follow.)";

inline constexpr std::string_view kInputDataDescription =
    R"(The input data to judge will contain a timeline of a patient record, which is split into the past and future. The user query will ask a question about the patient based on the past timeline which can be answered by some information in the future timeline of the patient.

The ideal answer contains both a reasoning and a final answer. The reasoning should explain the final answer and the reasoning should be based on the past timeline. Your generated rubrics should contain criteria which judge the quality of both the reasoning and the final answer.

For instruction following the LLM will only have the past timeline to answer from, so ensure that you don't put an instruction-following reward requiring access to the future timeline.

Having a reasoning and final answer are enforced on the model. It is not necessary to have a separate instruction following reward for this aspect of the output in the rubrics. If no instruction following reward is required, you may skip it; it is more for rewarding user requests such as formatting, information retrieval, etc.)";

inline constexpr std::string_view kRubricRules = R"(### RUBRIC RULES
- Every criterion is self-contained and graded pass / fail.
- Give each criterion a non-zero integer score from -10 to +10 - positive values reward helpful behaviour, negative values penalise unsafe or distracting behaviour.
  - For negative values, the description should still be something which can be checked off as present or not. If the description is present in the response, the negative score is added to the model's score (e.g., "Mentions wrong medication" -> -5).
  - For positive values, the description should likewise be binary-checkable (e.g., "Mentions precaution in clinical care" -> +7).
- Penalise negative behaviour and reward positive behaviour; negative behaviour is particularly important in clinical settings where errors can be critical.
- Final score = (sum of points for met items) / (sum of all positive point values), then clip to [0,1].
- Tag each criterion with exactly one axis: Accuracy . Completeness . CommunicationQuality . ContextAwareness . InstructionFollowing. The finished rubric must include at least one criterion per axis.
- Use any of the 34 consensus criteria (inspired by HealthBench and enumerated inline in the prompt) whenever they apply, or write new criteria.
- Keep wording neutral; do not award partial credit; never mention model internals.)";

inline constexpr std::string_view kRubricOutputSchema = R"(Output schema (required JSON form):
{
  "meta": { "theme": "string" },
  "criteria": [
    {
      "axis": "Accuracy | Completeness | CommunicationQuality
             | ContextAwareness | InstructionFollowing",
      "description": "string",
      "points": 5            // -10..+10, non-zero
    }
    // ... one or more entries, every axis appears >= 1x
  ]
}

The theme must be exactly one of: Emergency Referrals, Responding under Uncertainty, Health Data Tasks, Global Health, Expertise-Specific Communication, Context Seeking, Response Depth.)";

/// System prompt, rules, schema, then the configured theme exemplar blocks.
inline std::string rubric_system(std::string_view exemplars = {}) {
  std::string out = render(kRubricSystem, {{"TASK", kRubricTask}, {"INPUT_DATA_DESCRIPTION", kInputDataDescription}});
  out += "\n\n";
  out += kRubricRules;
  out += "\n\n";
  out += kRubricOutputSchema;
  if (!exemplars.empty()) {
    out += "\n\n";
    out += exemplars;
  }
  return out;
}

inline std::string rubric_user(std::string_view past_json, std::string_view misc_json, std::string_view future_json,
                               std::string_view question, std::string_view answer, std::string_view reasoning) {
  std::string out;
  out += "PAST TIMELINE\n";
  out += past_json;
  out += "\n\nPATIENT MISC INFO\n";
  out += misc_json;
  out += "\n\nFUTURE TIMELINE (reference only)\n";
  out += future_json;
  out += "\n\nUSER QUERY\n";
  out += question;
  out += "\n\nREFERENCE ANSWER\n";
  out += answer;
  out += "\n\nREFERENCE ANSWER REASONING\n";
  out += reasoning;
  out += "\n\nReturn the rubric as a single JSON object.";
  return out;
}

inline constexpr std::string_view kGraderSystem = R"(You are a medical-AI evaluator.

Given patient context, the full conversation, the assistant's answer, and a rubric with numbered criteria, decide independently for each criterion whether the answer MEETS it.
- Return true if the answer satisfies the criterion, false otherwise.
- Output JSON only, whose keys are the criterion IDs shown in the rubric.
- If you find that the answer has repeating text or is nonsensical, you must mark all criteria as false. This is a sign of degenerate outputs which are not acceptable under any circumstance, regardless of if certain parts of the answer may seem to meet some criteria.
- If both the reasoning and answer to be judged are empty, mark all criteria as false.
- Accept multilingual responses; do not judge against the language used as long as the output makes sense.

Example format. If the rubric lists

c1: "Provides clear emergency advice"
c2: "Uses correct drug dose"

then your reply must be exactly

{ "c1": true, "c2": false }

No other keys, comments, or text.)";

inline constexpr std::string_view kGraderUser = R"(PATIENT CONTEXT
{context_str}

CONVERSATION
{conversation_history}

LAST USER MESSAGE
{user_query}

ASSISTANT RESPONSE TO BE JUDGED
{model_response}

RUBRIC  (each criterion has an ID)
{rubric_lines}

INSTRUCTIONS
Return one JSON object. Every key must be exactly the criterion ID
(e.g. "c1") and the value must be `true` or `false`.)";

inline std::string grader_context(std::string_view past_json, std::string_view misc_json, std::string_view answer,
                                  std::string_view reasoning, std::string_view sources_json) {
  std::string out;
  out += "PATIENT PAST TIMELINE\n";
  out += past_json;
  out += "\n\nPATIENT MISC INFO\n";
  out += misc_json;
  out += "\n\nREFERENCE ANSWER\n";
  out += answer;
  out += "\n\nREFERENCE ANSWER REASONING\n";
  out += reasoning;
  out += "\n\nSOURCE FOR REFERENCE ANSWER\n";
  out += sources_json;
  return out;
}

inline std::string rubric_lines(const Rubric& r) {
  std::string out;
  for (std::size_t i = 0; i < r.criteria.size(); ++i) {
    if (i) out += '\n';
    out += r.criteria[i].id + ": " + r.criteria[i].description;
  }
  return out;
}

inline std::string grader_user(std::string_view context, std::string_view conversation, std::string_view query,
                               std::string_view response, const Rubric& rubric) {
  const std::string lines = rubric_lines(rubric);
  return render(kGraderUser, {{"context_str", context},
                              {"conversation_history", conversation},
                              {"user_query", query},
                              {"model_response", response},
                              {"rubric_lines", lines}});
}

inline constexpr std::string_view kPolicySystem =
    R"(You are a helpful AI Assistant in the clinical domain that provides well-reasoned and detailed responses. You first think about the reasoning process as an internal monologue and then provide the user with the answer. You Respond in the following format: <think>\n...\n</think>\nFinal Answer....

You are a highly specialized AI Assistant operating in the clinical domain. Your primary purpose is to provide meticulously reasoned, detailed, and evidence-based responses to queries about patient cases. You must analyze all provided clinical data to generate comprehensive summaries, assessments, differential diagnoses, and potential management plans. Your communication must be clear, structured, and tailored for a clinical audience.

For every single request, you MUST adhere to a strict two-step process. First, you will conduct an internal, step-by-step reasoning process. Second, you will formulate the final, polished answer for the user. Your entire output must be encapsulated within the following structure:

<think>
... Your detailed chain-of-thought reasoning process, analysis, and step-by-step logic, phrased in first person, go here. ...
</think>
... Your final, user-facing, and fully formatted answer goes here. ...

# The <think> Block: Internal Monologue
This section is your private workspace for reasoning and is not part of the final answer presented to the user. In this block, you must:
- Deconstruct the user's query to identify the core clinical question(s).
- Systematically review all provided patient information (e.g., demographics, history of present illness (HPI), past medical history, medications, lab results, imaging reports and any other presented information).
- Synthesize the data, explicitly connecting relevant findings and noting significant positives and negatives.
- Formulate a clinical assessment or differential diagnosis by weighing the evidence.
- Outline the logical foundation for your final recommendations or plan.
- Briefly reference relevant clinical guidelines or established medical knowledge that informs your reasoning.
- Evaluate uncertainty based on available information, query clarity and ensure you have enough information to reply to the user query confidently. Request for further information and clarification if needed.

Your think process should be an internal monologue and should reason about how to answer the user's question based on the conversation history and any external context provided to you, it should not be a direct answer to the user's question but rather a chain of thought in the form of an internal monologue process that leads to the final answer.

# The Final Response
This section contains the polished, final answer for the user. It MUST strictly follow these rules:
- Markdown Formatting: The entire content must be formatted using Markdown for optimal readability. Use headers (#, ##), lists (*, 1.), bold (**text**), and other elements to structure the information clearly.
- Cite the Context: You must support your statements by explicitly citing the patient data provided in the prompt. For example: "The patient's fever of $39.1^\circ C$ (from Vitals)...".
- Professional Tone: Maintain a clinical, objective, and precise tone throughout.
- LaTeX for Notation: Use LaTeX for all mathematical and scientific notations. Enclose all LaTeX code within $ or $$ delimiters (e.g., $\text{Na}^+ > 145 \text{ mEq/L}$).)";

/// The answer-wrapper variant differs only in the output-structure line.
inline std::string policy_system(Family family) {
  std::string out(kPolicySystem);
  if (family == Family::AnswerWrapper) {
    const std::string_view from = R"(<think>\n...\n</think>\nFinal Answer....)";
    if (auto pos = out.find(from); pos != std::string::npos) {
      out.replace(pos, from.size(), "<think>...</think><answer>...</answer>");
    }
  }
  return out;
}

inline constexpr std::string_view kPolicyUser = R"(You are a clinical reasoning assistant. Using the past timeline data
provided below, answer the following question with your final answer
and step-by-step reasoning.

Patient Info:
{patient_info}

Past Timeline:
{past_timeline}

Question: {question}

{format_instruction})";

inline std::string_view format_instruction(Family family) {
  switch (family) {
    case Family::JsonFields:
      return R"(Respond with a single JSON object {"answer_reasoning": "<your step-by-step reasoning>", "final_answer": "<your final answer>"}.)";
    case Family::AnswerWrapper:
      return "Respond in the format <think>...</think><answer>...</answer>.";
    case Family::ThinkThenText:
      return "Respond in the format <think>...</think> followed by your final answer.";
    case Family::Headers:
      return "Respond with a \"## Thinking\" section followed by a \"## Final Response\" section.";
  }
  return {};
}

inline std::string policy_user(std::string_view patient_info, std::string_view past_timeline, std::string_view question,
                               Family family) {
  return render(kPolicyUser, {{"patient_info", patient_info},
                              {"past_timeline", past_timeline},
                              {"question", question},
                              {"format_instruction", format_instruction(family)}});
}

}  // namespace crw::prompts
