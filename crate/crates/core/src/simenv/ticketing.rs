//! City/zipcode lookup and an air-ticket ledger.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::{json, Value as Json};

use crate::call::ToolCall;

pub(crate) const OPERATIONS: &[&str] = &[
    "get_zipcode",
    "buy_tickets",
    "get_ticket_info",
    "cancel_ticket",
    "list_cities",
    "get_weather",
];

pub(crate) const MUTATING: &[&str] = &["buy_tickets", "cancel_ticket"];

#[derive(Debug, Clone, PartialEq)]
pub struct Ticket {
    pub ticket_id: i64,
    pub from_zipcode: String,
    pub to_zipcode: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TicketingStore {
    /// City name to zipcode, in table order.
    pub cities: Vec<(String, String)>,
    pub forecasts: Vec<(String, String)>,
    pub tickets: Vec<Ticket>,
    pub next_ticket_id: i64,
}

impl TicketingStore {
    pub(crate) fn init<R: Rng>(fixtures: &Json, golden: bool, rng: &mut R) -> Result<Self, String> {
        let mut cities: Vec<(String, String)> = fixtures
            .get("cities")
            .and_then(Json::as_object)
            .ok_or("fixtures.cities must be an object of city -> zipcode")?
            .iter()
            .map(|(city, zip)| {
                zip.as_str()
                    .map(|z| (city.clone(), z.to_string()))
                    .ok_or_else(|| format!("zipcode for {city} must be a string"))
            })
            .collect::<Result<_, _>>()?;
        let first_ticket_id = fixtures
            .get("first_ticket_id")
            .and_then(Json::as_i64)
            .ok_or("fixtures.first_ticket_id must be an integer")?;
        let pool: Vec<&str> = fixtures
            .get("extra_city_pool")
            .and_then(Json::as_array)
            .map(|a| a.iter().filter_map(Json::as_str).collect())
            .unwrap_or_default();
        let conditions: Vec<&str> = fixtures
            .get("forecast_conditions")
            .and_then(Json::as_array)
            .map(|a| a.iter().filter_map(Json::as_str).collect())
            .unwrap_or_else(|| vec!["sunny"]);

        let next_ticket_id = if golden {
            first_ticket_id
        } else {
            let extra = pool.len().min(3);
            for city in pool.choose_multiple(rng, extra) {
                if cities.iter().any(|(c, _)| c == city) {
                    continue;
                }
                let zip = loop {
                    let candidate = format!("{:05}", rng.random_range(10_000..100_000));
                    if !cities.iter().any(|(_, z)| *z == candidate) {
                        break candidate;
                    }
                };
                cities.push((city.to_string(), zip));
            }
            rng.random_range(10_000..90_000)
        };

        let forecasts = cities
            .iter()
            .map(|(city, _)| {
                let condition = conditions.choose(rng).copied().unwrap_or("sunny");
                (city.clone(), condition.to_string())
            })
            .collect();

        Ok(Self {
            cities,
            forecasts,
            tickets: Vec::new(),
            next_ticket_id,
        })
    }

    pub fn zipcode(&self, city: &str) -> Option<&str> {
        self.cities.iter().find(|(c, _)| c == city).map(|(_, z)| z.as_str())
    }

    fn knows_zipcode(&self, zip: &str) -> bool {
        self.cities.iter().any(|(_, z)| z == zip)
    }

    pub(crate) fn to_json(&self) -> Json {
        json!({
            "cities": self.cities.iter().map(|(c, z)| json!([c, z])).collect::<Vec<_>>(),
            "forecasts": self.forecasts.iter().map(|(c, f)| json!([c, f])).collect::<Vec<_>>(),
            "tickets": self.tickets.iter().map(|t| json!([t.ticket_id, t.from_zipcode, t.to_zipcode])).collect::<Vec<_>>(),
            "next_ticket_id": self.next_ticket_id,
        })
    }

    /// Runs one operation. Arguments were already checked against the tool's
    /// parameter specs. Returns the payload and, for mutations, the successor.
    pub(crate) fn execute(&self, op: &str, call: &ToolCall) -> Result<(Json, Option<Self>), String> {
        let text = |name: &str| call.get(name).and_then(|v| v.as_str()).unwrap_or_default().to_string();
        match op {
            "get_zipcode" => {
                let city = text("city");
                self.zipcode(&city)
                    .map(|z| (json!(z), None))
                    .ok_or_else(|| format!("no zipcode on record for city {city:?}"))
            }
            "buy_tickets" => {
                let from = text("cityA_zipcode");
                let to = text("cityB_zipcode");
                for zip in [&from, &to] {
                    if !self.knows_zipcode(zip) {
                        return Err(format!("unknown zipcode {zip:?}"));
                    }
                }
                if from == to {
                    return Err("departure and arrival zipcodes must differ".into());
                }
                let mut next = self.clone();
                let ticket_id = next.next_ticket_id;
                next.next_ticket_id += 1;
                next.tickets.push(Ticket {
                    ticket_id,
                    from_zipcode: from,
                    to_zipcode: to,
                });
                Ok((json!({ "ticket_id": ticket_id }), Some(next)))
            }
            "get_ticket_info" => {
                let id = call.get("ticket_id").and_then(|v| v.as_int()).unwrap_or_default();
                self.tickets
                    .iter()
                    .find(|t| t.ticket_id == id)
                    .map(|t| {
                        let payload = json!({
                            "ticket_id": t.ticket_id,
                            "from_zipcode": t.from_zipcode,
                            "to_zipcode": t.to_zipcode,
                        });
                        (payload, None)
                    })
                    .ok_or_else(|| format!("no ticket with id {id}"))
            }
            "cancel_ticket" => {
                let id = call.get("ticket_id").and_then(|v| v.as_int()).unwrap_or_default();
                let Some(index) = self.tickets.iter().position(|t| t.ticket_id == id) else {
                    return Err(format!("no ticket with id {id}"));
                };
                let mut next = self.clone();
                next.tickets.remove(index);
                Ok((json!({ "cancelled": id }), Some(next)))
            }
            "list_cities" => {
                let names: Vec<&str> = self.cities.iter().map(|(c, _)| c.as_str()).collect();
                Ok((json!({ "cities": names }), None))
            }
            "get_weather" => {
                let city = text("city");
                self.forecasts
                    .iter()
                    .find(|(c, _)| *c == city)
                    .map(|(_, f)| (json!({ "forecast": f }), None))
                    .ok_or_else(|| format!("no forecast for city {city:?}"))
            }
            other => Err(format!("operation {other} is not implemented")),
        }
    }
}
