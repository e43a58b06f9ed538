//! Country name to adjectival form, used by the Cube cuisine template.

/// (country, adjective). Lookups are case-insensitive on the country name.
const TABLE: &[(&str, &str)] = &[
    ("Afghanistan", "Afghan"),
    ("Albania", "Albanian"),
    ("Algeria", "Algerian"),
    ("Argentina", "Argentine"),
    ("Armenia", "Armenian"),
    ("Australia", "Australian"),
    ("Austria", "Austrian"),
    ("Bangladesh", "Bangladeshi"),
    ("Belgium", "Belgian"),
    ("Bosnia and Herzegovina", "Bosnian"),
    ("Brazil", "Brazilian"),
    ("Cambodia", "Cambodian"),
    ("Cameroon", "Cameroonian"),
    ("Canada", "Canadian"),
    ("Chile", "Chilean"),
    ("China", "Chinese"),
    ("Colombia", "Colombian"),
    ("Croatia", "Croatian"),
    ("Cyprus", "Cypriot"),
    ("Czech Republic", "Czech"),
    ("Egypt", "Egyptian"),
    ("Ethiopia", "Ethiopian"),
    ("Fiji", "Fijian"),
    ("Philippines", "Filipino"),
    ("Finland", "Finnish"),
    ("France", "French"),
    ("Germany", "German"),
    ("Greece", "Greek"),
    ("Hong Kong", "Hong Kong"),
    ("Hungary", "Hungarian"),
    ("India", "Indian"),
    ("Indonesia", "Indonesian"),
    ("Iran", "Iranian"),
    ("Iraq", "Iraqi"),
    ("Ireland", "Irish"),
    ("Israel", "Israeli"),
    ("Italy", "Italian"),
    ("Japan", "Japanese"),
    ("Kenya", "Kenyan"),
    ("Laos", "Laotian"),
    ("Lebanon", "Lebanese"),
    ("Malaysia", "Malaysian"),
    ("Malta", "Maltese"),
    ("Mauritius", "Mauritian"),
    ("Mexico", "Mexican"),
    ("Myanmar", "Burmese"),
    ("Nepal", "Nepalese"),
    ("Netherlands", "Dutch"),
    ("New Zealand", "New Zealand"),
    ("North Macedonia", "Macedonian"),
    ("Nigeria", "Nigerian"),
    ("Pakistan", "Pakistani"),
    ("Palestine", "Palestinian"),
    ("Papua New Guinea", "Papua New Guinean"),
    ("Peru", "Peruvian"),
    ("Poland", "Polish"),
    ("Portugal", "Portuguese"),
    ("Romania", "Romanian"),
    ("Russia", "Russian"),
    ("Samoa", "Samoan"),
    ("Saudi Arabia", "Saudi"),
    ("Serbia", "Serbian"),
    ("Singapore", "Singaporean"),
    ("Somalia", "Somali"),
    ("South Africa", "South African"),
    ("South Korea", "Korean"),
    ("South Sudan", "South Sudanese"),
    ("Spain", "Spanish"),
    ("Sri Lanka", "Sri Lankan"),
    ("Sudan", "Sudanese"),
    ("Sweden", "Swedish"),
    ("Syria", "Syrian"),
    ("Taiwan", "Taiwanese"),
    ("Thailand", "Thai"),
    ("Timor-Leste", "Timorese"),
    ("Tonga", "Tongan"),
    ("Turkey", "Turkish"),
    ("Ukraine", "Ukrainian"),
    ("United Kingdom", "British"),
    ("United States", "American"),
    ("Venezuela", "Venezuelan"),
    ("Vietnam", "Vietnamese"),
    ("Zimbabwe", "Zimbabwean"),
];

/// Alternate spellings that resolve to a canonical entry in `TABLE`.
const ALIASES: &[(&str, &str)] = &[
    ("UK", "United Kingdom"),
    ("Great Britain", "United Kingdom"),
    ("England", "United Kingdom"),
    ("US", "United States"),
    ("USA", "United States"),
    ("United States of America", "United States"),
    ("Korea", "South Korea"),
    ("Republic of Korea", "South Korea"),
    ("Türkiye", "Turkey"),
    ("Turkiye", "Turkey"),
    ("Czechia", "Czech Republic"),
    ("Viet Nam", "Vietnam"),
    ("The Netherlands", "Netherlands"),
    ("The Philippines", "Philippines"),
    ("East Timor", "Timor-Leste"),
    ("Burma", "Myanmar"),
];

fn normalize(country: &str) -> String {
    country
        .split(|c: char| c.is_whitespace() || c == '_')
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub(crate) fn lookup(country: &str) -> Option<&'static str> {
    let key = normalize(country);
    let canonical = ALIASES
        .iter()
        .find(|(alias, _)| normalize(alias) == key)
        .map(|(_, name)| normalize(name))
        .unwrap_or(key);
    TABLE
        .iter()
        .find(|(name, _)| normalize(name) == canonical)
        .map(|(_, adj)| *adj)
}

/// Every country with a bundled adjective, in table order.
pub fn known_countries() -> impl Iterator<Item = &'static str> {
    TABLE.iter().map(|(name, _)| *name)
}
