// Worked examples bundled for offline use. Line breaks of the original
// transcripts are joined with single spaces (no space after a trailing hyphen).

#include "claver/prompts.hpp"

namespace claver {

std::string_view aspect_command(Aspect aspect) {
  switch (aspect) {
    case Aspect::Decomposition:
      return "Below, I will provide you with some action nouns. Please provide a simple and detailed description "
             "(explanation) about the action decomposition of these action nouns. Please note that the sentence "
             "length of the description should not exceed 76 words.";
    case Aspect::Synonym:
      return "Below, I will provide you with some action nouns or phrases. Please provide many words and phrases "
             "that share the same central concept as these action nouns or phrases but have more diverse "
             "expressions. Please note that your reply should not exceed 76 words in length.";
    case Aspect::BodyParts:
      return "Below, I will provide you with some action nouns. Please describe these actions based on their nouns "
             "and possible body parts involved. Please note that the sentence length of your response should not "
             "exceed 76 words.";
  }
  return "";
}

const std::vector<FixtureEntry>& fixtures() {
  static const std::vector<FixtureEntry> entries{
      {"abseiling", Aspect::Decomposition,
       "Abseiling combines several actions to descend a vertical surface with a rope. Climbers secure themselves "
       "with a harness and utilize a descender device for controlled descent. Simple actions, like maintaining a "
       "straight body position and regulating rope tension, form the basis. Abseiling demands proper training, "
       "safety measures, and is popular in adventure sports and rescue operations, allowing individuals to "
       "experience controlled descent in various settings."},
      {"air drumming", Aspect::Decomposition,
       "Air drumming is a rhythmic expression where individuals simulate playing drums without physical "
       "instruments. Simple actions, like mimicking drumming motions in the air, combine to create this "
       "imaginative and playful activity. Enthusiasts use their hands and feet to imitate drumming patterns, "
       "syncing with music. It's a spontaneous, enjoyable gesture often done during music listening or live "
       "performances, showcasing one's connection to the rhythm without the need for actual drums or drumsticks."},
      {"answering questions", Aspect::Decomposition,
       "Answering questions involves providing responses to queries posed by others. Simple actions like active "
       "listening, comprehension, and concise articulation combine in this communicative process. It is "
       "fundamental in various contexts, facilitating information exchange and problem-solving. Respondents draw "
       "on their knowledge and expertise to address inquiries, contributing to effective communication and "
       "fostering understanding between individuals or groups."},
      {"Cutting in the kitchen", Aspect::Synonym,
       "Slicing, dicing, chopping, mincing, cleaving, carving, trimming, preparing ingredients."},
      {"driving car", Aspect::Synonym,
       "Operating a vehicle, maneuvering behind the wheel, navigating the road, piloting an automobile, steering, "
       "cruising, commuting by car, motoring."},
      {"Walking With Dog", Aspect::Synonym,
       "Strolling with a canine companion, ambling with a pet, promenading with a pup, hiking with a furry friend, "
       "sauntering alongside a dog, wandering with a four-legged buddy, leash-walking, trotting with a pooch."},
      {"Cutting in the kitchen", Aspect::BodyParts,
       "Using a sharp knife, fingers gripping the handle, hand guiding the blade through ingredients on a cutting "
       "board, wrist controlling the motion, fingers curling slightly to hold the food steady, precision applied "
       "to achieve desired shapes or sizes, ensuring safety and efficiency during food preparation."},
      {"driving car", Aspect::BodyParts,
       "Gripping the steering wheel, hands adjusting position, fingers pressing pedals for acceleration and "
       "braking, eyes scanning surroundings for obstacles, feet coordinating between clutch, brake, and "
       "accelerator, body positioned comfortably in the driver's seat, mind focused on navigation and traffic "
       "signals, reacting swiftly to changing road conditions."},
      {"Walking With Dog", Aspect::BodyParts,
       "Leash in hand, fingers securing grip, arm relaxed as it swings alongside the body, legs moving in tandem "
       "with the dog's pace, feet stepping forward with purpose, eyes attentive to the dog's behavior and "
       "surroundings, occasional stops for sniffing or marking, a bond of companionship evident in synchronized "
       "movement."},
  };
  return entries;
}

}  // namespace claver
